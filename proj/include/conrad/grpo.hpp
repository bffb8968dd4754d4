#pragma once
// Group Relative Policy Optimization over per-study rollout groups:
// group-normalized advantages, a clipped-ratio surrogate with a full
// distribution KL penalty toward a frozen reference policy, and gradient
// ascent restricted to confidence-token positions. Includes the end-to-end
// training loop with a held-out calibration probe and early stopping.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "conrad/calib.hpp"
#include "conrad/env.hpp"
#include "conrad/policy.hpp"
#include "conrad/reward.hpp"
#include "conrad/rng.hpp"

namespace conrad {

// Held-out study blocks. Training consumes indices [0, num_studies);
// the calibration probe and final evaluation use disjoint high ranges.
inline constexpr std::int64_t kProbeStudyBase = std::int64_t{1} << 20;
inline constexpr std::int64_t kEvalStudyBase = 2000000;

struct GrpoConfig {
  int group_size = 8;
  double clip_range = 0.2;
  double kl_coeff = 0.04;
  double learning_rate = 1e-2;
  int epochs_per_batch = 1;
  double std_floor = 1e-8;
  int num_studies = 3000;  // config parser drops this to 1500 for sentence runs
  int probe_interval = 50;
  int probe_size = 200;
  double probe_min_delta = 1e-3;
  int probe_patience = 5;
  int reference_refresh_interval = 0;  // batches between reference snapshots; 0 = never
};

inline void validate(const GrpoConfig& cfg) {
  if (cfg.group_size < 2) throw std::invalid_argument("GrpoConfig: group_size must be >= 2");
  if (!(cfg.clip_range > 0.0 && cfg.clip_range < 1.0))
    throw std::invalid_argument("GrpoConfig: clip_range must be in (0,1)");
  if (cfg.kl_coeff < 0.0) throw std::invalid_argument("GrpoConfig: kl_coeff must be >= 0");
  if (!(cfg.learning_rate > 0.0))
    throw std::invalid_argument("GrpoConfig: learning_rate must be > 0");
  if (cfg.epochs_per_batch < 1)
    throw std::invalid_argument("GrpoConfig: epochs_per_batch must be >= 1");
  if (!(cfg.std_floor > 0.0)) throw std::invalid_argument("GrpoConfig: std_floor must be > 0");
  if (cfg.num_studies < 0) throw std::invalid_argument("GrpoConfig: num_studies must be >= 0");
  if (cfg.probe_interval < 1)
    throw std::invalid_argument("GrpoConfig: probe_interval must be >= 1");
  if (cfg.probe_size < 1) throw std::invalid_argument("GrpoConfig: probe_size must be >= 1");
  if (cfg.probe_min_delta < 0.0)
    throw std::invalid_argument("GrpoConfig: probe_min_delta must be >= 0");
  if (cfg.probe_patience < 1)
    throw std::invalid_argument("GrpoConfig: probe_patience must be >= 1");
  if (cfg.reference_refresh_interval < 0)
    throw std::invalid_argument("GrpoConfig: reference_refresh_interval must be >= 0");
}

struct Group {
  Study study;
  std::vector<Rollout> rollouts;
  std::vector<double> rewards;
  std::vector<double> advantages;
};

inline std::vector<double> compute_advantages(const std::vector<double>& rewards,
                                              double std_floor) {
  if (rewards.size() < 2)
    throw std::invalid_argument("compute_advantages: need at least 2 rewards");
  if (!(std_floor > 0.0))
    throw std::invalid_argument("compute_advantages: std_floor must be > 0");
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double popstd = std::sqrt(var / n);
  std::vector<double> adv(rewards.size(), 0.0);
  if (popstd < std_floor) return adv;
  for (std::size_t i = 0; i < rewards.size(); ++i)
    adv[i] = (rewards[i] - mean) / popstd;
  return adv;
}

struct GrpoStats {
  double mean_reward = 0.0;
  double mean_kl = 0.0;
  double clip_fraction = 0.0;
};

// One optimization step over the given groups: epochs_per_batch gradient
// ascent updates of the clipped surrogate minus the KL penalty, averaged
// over all rollouts, with gradients flowing only from Confidence positions.
// Stats are measured on the first epoch, before any update.
inline GrpoStats grpo_step(PolicyParams& params, const PolicyParams& reference,
                           const std::vector<Group>& groups,
                           const GrpoConfig& cfg) {
  validate(cfg);
  if (groups.empty()) throw std::invalid_argument("grpo_step: empty groups");
  std::size_t n_rollouts = 0;
  for (const auto& g : groups) {
    if (g.rollouts.size() != g.rewards.size() ||
        g.rollouts.size() != g.advantages.size() || g.rollouts.empty())
      throw std::invalid_argument("grpo_step: inconsistent group");
    n_rollouts += g.rollouts.size();
  }
  GrpoStats stats;
  for (int epoch = 0; epoch < cfg.epochs_per_batch; ++epoch) {
    std::vector<double> grad(params.shape.param_count(), 0.0);
    double kl_sum = 0.0;
    std::size_t positions = 0;
    std::size_t clip_binds = 0;
    double reward_sum = 0.0;
    for (const auto& g : groups) {
      for (std::size_t k = 0; k < g.rollouts.size(); ++k) {
        reward_sum += g.rewards[k];
        const double adv = g.advantages[k];
        for (const RolloutStep& step : g.rollouts[k].steps) {
          if (step.kind != StepKind::Confidence) continue;
          const auto h = detail::hidden_activations(params, step.state);
          const auto lp = detail::log_softmax(
              detail::head_logits(params, h, step.kind), 1.0);
          const auto lp_ref =
              detail::state_log_distribution(reference, step.state, step.kind, 1.0);
          double kl = 0.0;
          for (std::size_t t = 0; t < lp.size(); ++t)
            kl += std::exp(lp[t]) * (lp[t] - lp_ref[t]);
          kl_sum += kl;
          ++positions;
          const double ratio = std::exp(lp[step.token] - step.logprob);
          const double clipped =
              std::clamp(ratio, 1.0 - cfg.clip_range, 1.0 + cfg.clip_range);
          const bool clip_active = clipped * adv < ratio * adv;
          if (clip_active) ++clip_binds;
          const double coeff = clip_active ? 0.0 : adv * ratio;
          std::vector<double> dlogits(lp.size());
          for (std::size_t t = 0; t < lp.size(); ++t) {
            const double p = std::exp(lp[t]);
            const double dsurr =
                coeff * ((static_cast<int>(t) == step.token ? 1.0 : 0.0) - p);
            const double dkl = p * ((lp[t] - lp_ref[t]) - kl);
            dlogits[t] = dsurr - cfg.kl_coeff * dkl;
          }
          detail::accumulate_logits_grad(params, step.state, h, step.kind,
                                         dlogits, grad);
        }
      }
    }
    if (epoch == 0) {
      stats.mean_reward = reward_sum / static_cast<double>(n_rollouts);
      stats.mean_kl = positions ? kl_sum / static_cast<double>(positions) : 0.0;
      stats.clip_fraction =
          positions ? static_cast<double>(clip_binds) / static_cast<double>(positions)
                    : 0.0;
    }
    const double scale = cfg.learning_rate / static_cast<double>(n_rollouts);
    for (std::size_t i = 0; i < grad.size(); ++i)
      params.values[i] += scale * grad[i];
  }
  return stats;
}

// One evaluation unit: a held-out study, one rollout sampled with the
// confidence head restricted to the 11 grid tokens, and its oracle targets.
struct EvalUnit {
  Study study;
  Rollout rollout;
  CorrectnessTargets targets;
};

inline EvalUnit sample_eval_unit(const PolicyParams& params, const EnvConfig& env,
                                 const PolicyConfig& pcfg, std::int64_t index,
                                 std::uint64_t seed) {
  EvalUnit unit;
  unit.study = sample_study(env, index);
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(index)));
  unit.rollout = rollout(params, unit.study, pcfg, rng,
                         ConfidenceSampling::Greedy);
  unit.targets = make_targets(unit.rollout, unit.study);
  return unit;
}

// Calibration records for one unit: a single (confidence, report score) pair
// in the report scenario, one (confidence, support flag) pair per sentence
// in the sentence scenario.
inline void append_records(const EvalUnit& unit, Scenario scenario,
                           std::vector<CalibrationRecord>& out) {
  if (scenario == Scenario::ReportLevel) {
    out.push_back({unit.rollout.confidence_tokens.at(0) / 10.0,
                   unit.targets.report_score});
    return;
  }
  for (std::size_t i = 0; i < unit.rollout.confidence_tokens.size(); ++i)
    out.push_back({unit.rollout.confidence_tokens[i] / 10.0,
                   static_cast<double>(unit.targets.sentence_flags[i])});
}

struct BatchStats {
  int batch = 0;
  double mean_reward = 0.0;
  double mean_kl = 0.0;
  double clip_fraction = 0.0;
  bool has_probe = false;
  double probe_ece = 0.0;
};

using TrainingHistory = std::vector<BatchStats>;

struct TrainResult {
  PolicyParams params;
  PolicyParams reference;
  TrainingHistory history;
  int batches_completed = 0;
  bool early_stopped = false;
};

inline double probe_ece(const PolicyParams& params, const EnvConfig& env,
                        const PolicyConfig& pcfg, int probe_size,
                        std::uint64_t probe_seed) {
  std::vector<CalibrationRecord> records;
  records.reserve(probe_size);
  for (int i = 0; i < probe_size; ++i) {
    const auto unit =
        sample_eval_unit(params, env, pcfg, kProbeStudyBase + i, probe_seed);
    append_records(unit, pcfg.scenario, records);
  }
  return records.empty() ? 1.0 : ece(records);
}

// Full training loop: one study per batch, a fresh group of G rollouts from
// per-(batch, rollout) seed streams, advantages, one grpo_step. The
// reference is the initial snapshot unless a refresh interval is set. Every
// probe_interval batches a held-out ECE probe runs; training stops early
// when the probe fails to improve by probe_min_delta for probe_patience
// consecutive probes.
inline TrainResult train(const EnvConfig& env, const PolicyConfig& pcfg,
                         const RewardConfig& rcfg, const GrpoConfig& gcfg,
                         std::uint64_t seed) {
  validate(env);
  validate(rcfg);
  validate(gcfg);
  TrainResult result;
  result.params = init_policy(pcfg, env.feature_dim, env.num_findings,
                              env.max_sentences);
  result.reference = snapshot_reference(result.params);
  const std::uint64_t train_seed = derive_seed(seed, stream_tag::kTrainRollout);
  const std::uint64_t probe_seed = derive_seed(seed, stream_tag::kProbe);
  double best_probe = 1e300;
  int stale_probes = 0;
  for (int b = 0; b < gcfg.num_studies; ++b) {
    Group group;
    group.study = sample_study(env, b);
    group.rollouts.reserve(gcfg.group_size);
    group.rewards.reserve(gcfg.group_size);
    for (int k = 0; k < gcfg.group_size; ++k) {
      Rng rng(derive_seed(train_seed, static_cast<std::uint64_t>(b),
                          static_cast<std::uint64_t>(k)));
      group.rollouts.push_back(rollout(result.params, group.study, pcfg, rng));
      const auto targets = make_targets(group.rollouts.back(), group.study);
      group.rewards.push_back(
          reward_rollout(group.rollouts.back(), targets, pcfg.scenario, rcfg));
    }
    group.advantages = compute_advantages(group.rewards, gcfg.std_floor);
    const GrpoStats stats =
        grpo_step(result.params, result.reference, {group}, gcfg);
    BatchStats row{b, stats.mean_reward, stats.mean_kl, stats.clip_fraction,
                   false, 0.0};
    result.batches_completed = b + 1;
    if ((b + 1) % gcfg.probe_interval == 0) {
      row.has_probe = true;
      row.probe_ece =
          probe_ece(result.params, env, pcfg, gcfg.probe_size, probe_seed);
      if (row.probe_ece < best_probe - gcfg.probe_min_delta) {
        best_probe = row.probe_ece;
        stale_probes = 0;
      } else if (++stale_probes >= gcfg.probe_patience) {
        result.history.push_back(row);
        result.early_stopped = true;
        break;
      }
    }
    result.history.push_back(row);
    if (gcfg.reference_refresh_interval > 0 &&
        (b + 1) % gcfg.reference_refresh_interval == 0)
      result.reference = snapshot_reference(result.params);
  }
  return result;
}

}  // namespace conrad
