#pragma once
// Two-head generation policy: a shared tanh hidden layer feeding a finding
// head (F finding tokens + STOP) and a confidence head (levels 0..10 +
// INVALID). Supports report-level and sentence-level confidence scenarios,
// autoregressive rollouts with recorded per-step states and log-probs, and
// analytic gradients of masked log-probability sums.
//
// The step state is the concatenation of the study features, a one-hot
// sentence index capped at max_sentences, and a kind flag (1 for confidence
// steps). Training always evaluates log-probs at temperature 1; the
// temperature knob only shapes sampled diagnostics.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "conrad/env.hpp"
#include "conrad/rng.hpp"

namespace conrad {

enum class Scenario { ReportLevel, SentenceLevel };
enum class StepKind { Finding, Confidence };

// Confidence head vocabulary: token t in 0..10 verbalizes level t; token 11
// is the distinguished INVALID output.
inline constexpr int kNumConfidenceTokens = 12;
inline constexpr int kInvalidConfidenceToken = 11;
inline constexpr int kMaxConfidenceLevel = 10;

struct PolicyConfig {
  int hidden_dim = 32;
  Scenario scenario = Scenario::ReportLevel;
  double temperature = 1.0;
  // Xavier-style scale; large enough that gradients reach the shared layer
  // at a useful magnitude from the first batches.
  double init_scale = 1.0;
  std::uint64_t seed = 0;
};

struct PolicyShape {
  int feature_dim = 0;
  int num_findings = 0;
  int max_sentences = 0;
  int hidden_dim = 0;

  int state_dim() const { return feature_dim + max_sentences + 2; }
  int num_finding_tokens() const { return num_findings + 1; }  // + STOP
  int stop_token() const { return num_findings; }

  // Parameter layout, row-major: [W1 | b1 | Wf | bf | Wc | bc].
  std::size_t w1_offset() const { return 0; }
  std::size_t b1_offset() const {
    return static_cast<std::size_t>(hidden_dim) * state_dim();
  }
  std::size_t wf_offset() const { return b1_offset() + hidden_dim; }
  std::size_t bf_offset() const {
    return wf_offset() + static_cast<std::size_t>(num_finding_tokens()) * hidden_dim;
  }
  std::size_t wc_offset() const { return bf_offset() + num_finding_tokens(); }
  std::size_t bc_offset() const {
    return wc_offset() + static_cast<std::size_t>(kNumConfidenceTokens) * hidden_dim;
  }
  std::size_t param_count() const { return bc_offset() + kNumConfidenceTokens; }

  bool operator==(const PolicyShape&) const = default;
};

struct PolicyParams {
  PolicyShape shape;
  std::vector<double> values;

  bool operator==(const PolicyParams&) const = default;
};

struct RolloutStep {
  int position = 0;
  StepKind kind = StepKind::Finding;
  int token = 0;
  double logprob = 0.0;  // under the behavior policy at sampling time
  std::vector<double> state;
};

struct Rollout {
  std::int64_t study_id = 0;
  std::vector<RolloutStep> steps;
  std::vector<int> emitted_findings;
  std::vector<int> confidence_tokens;  // 0..10 or kInvalidConfidenceToken
};

// How the confidence head is read out. Training samples the full 12-way
// head so the INVALID/format-penalty path is reachable; evaluation takes
// the highest-probability grid token (the decoded confidence), so every
// unit yields a grid level and no exploration noise leaks into metrics.
enum class ConfidenceSampling { Full, Greedy };

inline PolicyParams init_policy(const PolicyConfig& cfg, int feature_dim,
                                int num_findings, int max_sentences) {
  if (cfg.hidden_dim < 1) throw std::invalid_argument("init_policy: hidden_dim must be >= 1");
  if (!(cfg.temperature > 0.0))
    throw std::invalid_argument("init_policy: temperature must be > 0");
  if (cfg.init_scale < 0.0)
    throw std::invalid_argument("init_policy: init_scale must be >= 0");
  if (feature_dim < 1 || num_findings < 1 || max_sentences < 1)
    throw std::invalid_argument("init_policy: dims must be positive");
  PolicyParams params;
  params.shape = PolicyShape{feature_dim, num_findings, max_sentences, cfg.hidden_dim};
  params.values.assign(params.shape.param_count(), 0.0);
  Rng rng(derive_seed(cfg.seed, stream_tag::kPolicyInit));
  const PolicyShape& s = params.shape;
  const double w1_std = cfg.init_scale / std::sqrt(static_cast<double>(s.state_dim()));
  const double head_std = cfg.init_scale / std::sqrt(static_cast<double>(s.hidden_dim));
  for (std::size_t i = s.w1_offset(); i < s.b1_offset(); ++i)
    params.values[i] = w1_std * rng.next_gaussian();
  for (std::size_t i = s.wf_offset(); i < s.bf_offset(); ++i)
    params.values[i] = head_std * rng.next_gaussian();
  for (std::size_t i = s.wc_offset(); i < s.bc_offset(); ++i)
    params.values[i] = head_std * rng.next_gaussian();
  return params;
}

inline PolicyParams snapshot_reference(const PolicyParams& params) { return params; }

inline std::vector<double> compute_state(const PolicyShape& shape,
                                         const std::vector<double>& features,
                                         int sentence_index, StepKind kind) {
  if (features.size() != static_cast<std::size_t>(shape.feature_dim))
    throw std::invalid_argument("compute_state: feature dimension mismatch");
  if (sentence_index < 0)
    throw std::invalid_argument("compute_state: negative sentence index");
  std::vector<double> state(shape.state_dim(), 0.0);
  for (int i = 0; i < shape.feature_dim; ++i) {
    if (!std::isfinite(features[i]))
      throw std::invalid_argument("compute_state: non-finite feature");
    state[i] = features[i];
  }
  const int capped = sentence_index > shape.max_sentences ? shape.max_sentences
                                                          : sentence_index;
  state[shape.feature_dim + capped] = 1.0;
  state[shape.state_dim() - 1] = kind == StepKind::Confidence ? 1.0 : 0.0;
  return state;
}

namespace detail {

inline std::vector<double> hidden_activations(const PolicyParams& params,
                                              const std::vector<double>& state) {
  const PolicyShape& s = params.shape;
  std::vector<double> h(s.hidden_dim);
  const double* w1 = params.values.data() + s.w1_offset();
  const double* b1 = params.values.data() + s.b1_offset();
  for (int j = 0; j < s.hidden_dim; ++j) {
    double z = b1[j];
    const double* row = w1 + static_cast<std::size_t>(j) * s.state_dim();
    for (int i = 0; i < s.state_dim(); ++i) z += row[i] * state[i];
    h[j] = std::tanh(z);
  }
  return h;
}

inline std::vector<double> head_logits(const PolicyParams& params,
                                       const std::vector<double>& h,
                                       StepKind kind) {
  const PolicyShape& s = params.shape;
  const bool conf = kind == StepKind::Confidence;
  const int n = conf ? kNumConfidenceTokens : s.num_finding_tokens();
  const double* w = params.values.data() + (conf ? s.wc_offset() : s.wf_offset());
  const double* b = params.values.data() + (conf ? s.bc_offset() : s.bf_offset());
  std::vector<double> logits(n);
  for (int k = 0; k < n; ++k) {
    double z = b[k];
    const double* row = w + static_cast<std::size_t>(k) * s.hidden_dim;
    for (int j = 0; j < s.hidden_dim; ++j) z += row[j] * h[j];
    logits[k] = z;
  }
  return logits;
}

// log-softmax of logits/temperature, numerically stabilized.
inline std::vector<double> log_softmax(std::vector<double> logits,
                                       double temperature) {
  double mx = logits[0] / temperature;
  for (double& z : logits) {
    z /= temperature;
    if (z > mx) mx = z;
  }
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - mx);
  const double lse = mx + std::log(sum);
  for (double& z : logits) z -= lse;
  return logits;
}

inline std::vector<double> state_log_distribution(const PolicyParams& params,
                                                  const std::vector<double>& state,
                                                  StepKind kind,
                                                  double temperature) {
  return log_softmax(head_logits(params, hidden_activations(params, state), kind),
                     temperature);
}

// Accumulates into grad the backprop of d(objective)/d(logits) = dlogits at
// one step, through the selected head and the shared layer.
inline void accumulate_logits_grad(const PolicyParams& params,
                                   const std::vector<double>& state,
                                   const std::vector<double>& h, StepKind kind,
                                   const std::vector<double>& dlogits,
                                   std::vector<double>& grad) {
  const PolicyShape& s = params.shape;
  const bool conf = kind == StepKind::Confidence;
  const int n = conf ? kNumConfidenceTokens : s.num_finding_tokens();
  const std::size_t w_off = conf ? s.wc_offset() : s.wf_offset();
  const std::size_t b_off = conf ? s.bc_offset() : s.bf_offset();
  std::vector<double> dh(s.hidden_dim, 0.0);
  for (int k = 0; k < n; ++k) {
    const double d = dlogits[k];
    if (d == 0.0) continue;
    grad[b_off + k] += d;
    const std::size_t row = w_off + static_cast<std::size_t>(k) * s.hidden_dim;
    const double* w = params.values.data() + row;
    for (int j = 0; j < s.hidden_dim; ++j) {
      grad[row + j] += d * h[j];
      dh[j] += d * w[j];
    }
  }
  for (int j = 0; j < s.hidden_dim; ++j) {
    const double dz = dh[j] * (1.0 - h[j] * h[j]);
    if (dz == 0.0) continue;
    grad[s.b1_offset() + j] += dz;
    const std::size_t row = s.w1_offset() + static_cast<std::size_t>(j) * s.state_dim();
    for (int i = 0; i < s.state_dim(); ++i) grad[row + i] += dz * state[i];
  }
}

inline int sample_from_logprobs(const std::vector<double>& logp, Rng& rng) {
  const double u = rng.next_double();
  double cum = 0.0;
  const int n = static_cast<int>(logp.size());
  for (int k = 0; k < n; ++k) {
    cum += std::exp(logp[k]);
    if (u < cum) return k;
  }
  return n - 1;
}

}  // namespace detail

inline std::vector<double> step_distribution(const PolicyParams& params,
                                             const std::vector<double>& features,
                                             int sentence_index, StepKind kind,
                                             double temperature = 1.0) {
  if (!(temperature > 0.0))
    throw std::invalid_argument("step_distribution: temperature must be > 0");
  const auto state = compute_state(params.shape, features, sentence_index, kind);
  auto logp = detail::state_log_distribution(params, state, kind, temperature);
  for (double& v : logp) v = std::exp(v);
  return logp;
}

inline Rollout rollout(const PolicyParams& params, const Study& study,
                       const PolicyConfig& cfg, Rng& rng,
                       ConfidenceSampling sampling = ConfidenceSampling::Full) {
  const PolicyShape& shape = params.shape;
  Rollout out;
  out.study_id = study.id;
  int position = 0;

  auto take_confidence = [&](int sentence_index) {
    auto state = compute_state(shape, study.features, sentence_index,
                               StepKind::Confidence);
    auto logp = detail::state_log_distribution(params, state,
                                               StepKind::Confidence,
                                               cfg.temperature);
    int token;
    double lp;
    if (sampling == ConfidenceSampling::Greedy) {
      std::vector<double> valid(logp.begin(),
                                logp.begin() + kInvalidConfidenceToken);
      valid = detail::log_softmax(std::move(valid), 1.0);
      token = 0;
      for (int c = 1; c < kInvalidConfidenceToken; ++c)
        if (valid[c] > valid[token]) token = c;
      lp = valid[token];
    } else {
      token = detail::sample_from_logprobs(logp, rng);
      lp = logp[token];
    }
    out.steps.push_back({position++, StepKind::Confidence, token, lp,
                         std::move(state)});
    out.confidence_tokens.push_back(token);
  };

  int emitted = 0;
  while (true) {
    if (emitted == shape.max_sentences) {
      if (cfg.scenario == Scenario::ReportLevel) take_confidence(emitted);
      break;
    }
    auto state = compute_state(shape, study.features, emitted, StepKind::Finding);
    const auto logp = detail::state_log_distribution(params, state,
                                                     StepKind::Finding,
                                                     cfg.temperature);
    const int token = detail::sample_from_logprobs(logp, rng);
    out.steps.push_back({position++, StepKind::Finding, token, logp[token],
                         std::move(state)});
    if (token == shape.stop_token()) {
      if (cfg.scenario == Scenario::ReportLevel) take_confidence(emitted);
      break;
    }
    out.emitted_findings.push_back(token);
    ++emitted;
    if (cfg.scenario == Scenario::SentenceLevel) take_confidence(emitted);
  }
  return out;
}

inline std::vector<bool> confidence_mask(const Rollout& r) {
  std::vector<bool> mask(r.steps.size());
  for (std::size_t i = 0; i < r.steps.size(); ++i)
    mask[i] = r.steps[i].kind == StepKind::Confidence;
  return mask;
}

struct LogprobGradResult {
  std::vector<double> logprobs;  // per step, under the given params
  std::vector<double> grad;      // d/dparams of the masked log-prob sum
};

// Gradient of sum over masked positions of log pi(token | state) under
// `params`, recomputed at temperature 1. Log-probs are returned for every
// step regardless of mask.
inline LogprobGradResult logprob_grad(const PolicyParams& params,
                                      const Rollout& r,
                                      const std::vector<bool>& mask) {
  if (mask.size() != r.steps.size())
    throw std::invalid_argument("logprob_grad: mask length mismatch");
  LogprobGradResult res;
  res.logprobs.resize(r.steps.size());
  res.grad.assign(params.shape.param_count(), 0.0);
  for (std::size_t i = 0; i < r.steps.size(); ++i) {
    const RolloutStep& step = r.steps[i];
    const auto h = detail::hidden_activations(params, step.state);
    auto logp = detail::log_softmax(detail::head_logits(params, h, step.kind), 1.0);
    res.logprobs[i] = logp[step.token];
    if (!mask[i]) continue;
    std::vector<double> dlogits(logp.size());
    for (std::size_t k = 0; k < logp.size(); ++k)
      dlogits[k] = (static_cast<int>(k) == step.token ? 1.0 : 0.0) - std::exp(logp[k]);
    detail::accumulate_logits_grad(params, step.state, h, step.kind, dlogits,
                                   res.grad);
  }
  return res;
}

}  // namespace conrad
