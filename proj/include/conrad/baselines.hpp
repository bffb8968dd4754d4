#pragma once
// Comparison confidence estimators, all producing calibration records over
// the same evaluation rollouts as the verbalized baseline: sequence
// probability, an untrained two-way P(True) readout, self-consistency via
// set agreement across resamples, and a trained linear probe on the
// policy's hidden state.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <stdexcept>
#include <vector>

#include "conrad/calib.hpp"
#include "conrad/env.hpp"
#include "conrad/policy.hpp"
#include "conrad/reward.hpp"
#include "conrad/rng.hpp"

namespace conrad {

// Hidden activations at the post-report confidence state: features plus the
// emitted-sentence count, confidence kind flag set. This is the "hidden
// state" read by P(True) and the trained probe.
inline std::vector<double> post_report_hidden(const PolicyParams& params,
                                              const Study& study,
                                              const Rollout& r) {
  const int emitted = static_cast<int>(r.emitted_findings.size());
  const auto state =
      compute_state(params.shape, study.features, emitted, StepKind::Confidence);
  return detail::hidden_activations(params, state);
}

// Zero-shot verbalized confidence: sample one rollout per study (grid
// tokens only) and pair the normalized confidence token with the oracle
// score. Report scenario yields one record per study; sentence scenario one
// per emitted sentence.
inline std::vector<CalibrationRecord> verbalize_base(
    const PolicyParams& params, const std::vector<Study>& studies,
    const PolicyConfig& pcfg, std::uint64_t seed) {
  std::vector<CalibrationRecord> records;
  records.reserve(studies.size());
  for (const Study& study : studies) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(study.id)));
    const Rollout r =
        rollout(params, study, pcfg, rng, ConfidenceSampling::Greedy);
    const auto targets = make_targets(r, study);
    if (pcfg.scenario == Scenario::ReportLevel) {
      records.push_back({r.confidence_tokens.at(0) / 10.0, targets.report_score});
    } else {
      for (std::size_t i = 0; i < r.confidence_tokens.size(); ++i)
        records.push_back({r.confidence_tokens[i] / 10.0,
                           static_cast<double>(targets.sentence_flags[i])});
    }
  }
  return records;
}

// Mean token probability over the report content (Finding steps only;
// confidence tokens are the quantity under study and are excluded).
inline double sequence_probability(const Rollout& r) {
  double total = 0.0;
  std::size_t count = 0;
  for (const RolloutStep& step : r.steps) {
    if (step.kind != StepKind::Finding) continue;
    total += std::exp(step.logprob);
    ++count;
  }
  if (count == 0)
    throw std::invalid_argument("sequence_probability: rollout has no finding steps");
  return total / static_cast<double>(count);
}

// Untrained two-way readout for the P(True) self-assessment: weights drawn
// once per run from the master seed and never updated.
struct PTrueHead {
  std::vector<double> w_true;
  std::vector<double> w_false;
  double b_true = 0.0;
  double b_false = 0.0;
};

inline PTrueHead make_p_true_head(int hidden_dim, std::uint64_t seed) {
  if (hidden_dim < 1)
    throw std::invalid_argument("make_p_true_head: hidden_dim must be >= 1");
  PTrueHead head;
  Rng rng(derive_seed(seed, stream_tag::kPTrueHead));
  const double scale = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  head.w_true.resize(hidden_dim);
  head.w_false.resize(hidden_dim);
  for (double& w : head.w_true) w = scale * rng.next_gaussian();
  for (double& w : head.w_false) w = scale * rng.next_gaussian();
  return head;
}

inline double p_true(const PolicyParams& params, const Study& study,
                     const Rollout& r, const PTrueHead& head) {
  if (head.w_true.size() != static_cast<std::size_t>(params.shape.hidden_dim) ||
      head.w_false.size() != head.w_true.size())
    throw std::invalid_argument("p_true: head dimension mismatch");
  const auto h = post_report_hidden(params, study, r);
  double z_true = head.b_true;
  double z_false = head.b_false;
  for (int j = 0; j < params.shape.hidden_dim; ++j) {
    z_true += head.w_true[j] * h[j];
    z_false += head.w_false[j] * h[j];
  }
  return 1.0 / (1.0 + std::exp(z_false - z_true));
}

inline double jaccard(const std::set<int>& a, const std::set<int>& b) {
  return green_surrogate(a, b);
}

inline double mean_set_agreement(const std::set<int>& target,
                                 const std::vector<std::set<int>>& samples) {
  if (samples.empty())
    throw std::invalid_argument("mean_set_agreement: no samples");
  double total = 0.0;
  for (const auto& s : samples) total += jaccard(target, s);
  return total / static_cast<double>(samples.size());
}

// Agreement between the target rollout's finding set and K fresh samples.
inline double self_consistency(const PolicyParams& params, const Study& study,
                               const std::set<int>& target_findings,
                               const PolicyConfig& pcfg, int k,
                               std::uint64_t seed) {
  if (k < 1) throw std::invalid_argument("self_consistency: K must be >= 1");
  std::vector<std::set<int>> samples;
  samples.reserve(k);
  for (int i = 0; i < k; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    const Rollout r =
        rollout(params, study, pcfg, rng, ConfidenceSampling::Greedy);
    samples.emplace_back(r.emitted_findings.begin(), r.emitted_findings.end());
  }
  return mean_set_agreement(target_findings, samples);
}

struct ProbeConfig {
  double learning_rate = 1e-4;
  int max_epochs = 10;
  int patience = 3;
};

struct ProbeModel {
  std::vector<double> w;
  double b = 0.0;
};

inline double probe_predict(const ProbeModel& model,
                            const std::vector<double>& hidden) {
  if (hidden.size() != model.w.size())
    throw std::invalid_argument("probe_predict: dimension mismatch");
  double z = model.b;
  for (std::size_t j = 0; j < hidden.size(); ++j) z += model.w[j] * hidden[j];
  return 1.0 / (1.0 + std::exp(-z));
}

inline double probe_mse(const ProbeModel& model,
                        const std::vector<std::vector<double>>& states,
                        const std::vector<double>& targets,
                        const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw std::invalid_argument("probe_mse: empty index set");
  double total = 0.0;
  for (std::size_t i : indices) {
    const double d = probe_predict(model, states.at(i)) - targets.at(i);
    total += d * d;
  }
  return total / static_cast<double>(indices.size());
}

// Sigmoid linear readout trained by per-sample gradient descent on squared
// error over the train split, early-stopped on validation loss; returns the
// weights with the best validation loss seen (including the zero init).
inline ProbeModel train_probe(const std::vector<std::vector<double>>& states,
                              const std::vector<double>& targets,
                              const std::vector<std::size_t>& train_idx,
                              const std::vector<std::size_t>& val_idx,
                              const ProbeConfig& cfg = {}) {
  if (states.size() != targets.size())
    throw std::invalid_argument("train_probe: states/targets length mismatch");
  if (train_idx.empty() || val_idx.empty())
    throw std::invalid_argument("train_probe: empty split");
  if (!(cfg.learning_rate > 0.0) || cfg.max_epochs < 1 || cfg.patience < 1)
    throw std::invalid_argument("train_probe: bad probe config");
  for (std::size_t i : train_idx)
    for (std::size_t j : val_idx)
      if (i == j) throw std::invalid_argument("train_probe: overlapping split");
  const std::size_t dim = states.at(train_idx.front()).size();
  ProbeModel model;
  model.w.assign(dim, 0.0);
  ProbeModel best = model;
  double best_val = probe_mse(model, states, targets, val_idx);
  int stale = 0;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    for (std::size_t i : train_idx) {
      const auto& h = states.at(i);
      if (h.size() != dim)
        throw std::invalid_argument("train_probe: ragged hidden states");
      const double pred = probe_predict(model, h);
      const double g = 2.0 * (pred - targets.at(i)) * pred * (1.0 - pred);
      for (std::size_t j = 0; j < dim; ++j)
        model.w[j] -= cfg.learning_rate * g * h[j];
      model.b -= cfg.learning_rate * g;
    }
    const double val = probe_mse(model, states, targets, val_idx);
    if (val < best_val) {
      best_val = val;
      best = model;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  return best;
}

}  // namespace conrad
