#pragma once
// Logarithmic strictly proper scoring-rule rewards for verbalized
// confidence, with confidence clipping, reward scaling, and a fixed penalty
// for format violations (INVALID confidence tokens or malformed structure).

#include <cmath>
#include <stdexcept>
#include <vector>

#include "conrad/env.hpp"
#include "conrad/policy.hpp"

namespace conrad {

struct RewardConfig {
  double lambda = 100.0;
  double epsilon = 1e-3;
  double format_penalty = -1000.0;
};

inline void validate(const RewardConfig& cfg) {
  if (!(cfg.lambda > 0.0)) throw std::invalid_argument("RewardConfig: lambda must be > 0");
  if (!(cfg.epsilon > 0.0 && cfg.epsilon < 0.5))
    throw std::invalid_argument("RewardConfig: epsilon must be in (0, 0.5)");
  if (!(cfg.format_penalty < cfg.lambda * std::log(cfg.epsilon)))
    throw std::invalid_argument(
        "RewardConfig: format_penalty must be below lambda*log(epsilon)");
}

inline double clip_confidence(double p, double epsilon) {
  if (!(p >= 0.0 && p <= 1.0))
    throw std::invalid_argument("clip_confidence: p outside [0,1]");
  if (!(epsilon > 0.0 && epsilon < 0.5))
    throw std::invalid_argument("clip_confidence: epsilon outside (0, 0.5)");
  return std::min(std::max(p, epsilon), 1.0 - epsilon);
}

inline double reward_report(double s, double p_hat, const RewardConfig& cfg) {
  validate(cfg);
  if (!(s >= 0.0 && s <= 1.0))
    throw std::invalid_argument("reward_report: s outside [0,1]");
  const double q = clip_confidence(p_hat, cfg.epsilon);
  return cfg.lambda * (s * std::log(q) + (1.0 - s) * std::log(1.0 - q));
}

inline double reward_sentence(const std::vector<int>& flags,
                              const std::vector<double>& p_hats,
                              const RewardConfig& cfg) {
  validate(cfg);
  if (flags.size() != p_hats.size())
    throw std::invalid_argument("reward_sentence: length mismatch");
  if (flags.empty()) throw std::invalid_argument("reward_sentence: empty input");
  double total = 0.0;
  for (std::size_t i = 0; i < flags.size(); ++i) {
    if (flags[i] != 0 && flags[i] != 1)
      throw std::invalid_argument("reward_sentence: flags must be 0 or 1");
    const double q = clip_confidence(p_hats[i], cfg.epsilon);
    total += flags[i] == 1 ? std::log(q) : std::log(1.0 - q);
  }
  return cfg.lambda * total / static_cast<double>(flags.size());
}

// Scores one sampled rollout against the oracle targets. Any INVALID
// confidence token, a report-level rollout without exactly one confidence
// token, or a sentence-level rollout with no scored sentences is a format
// violation and earns cfg.format_penalty.
inline double reward_rollout(const Rollout& r, const CorrectnessTargets& targets,
                             Scenario scenario, const RewardConfig& cfg) {
  validate(cfg);
  for (int token : r.confidence_tokens)
    if (token == kInvalidConfidenceToken) return cfg.format_penalty;
  if (scenario == Scenario::ReportLevel) {
    if (r.confidence_tokens.size() != 1) return cfg.format_penalty;
    const double p_hat = r.confidence_tokens[0] / 10.0;
    return reward_report(targets.report_score, p_hat, cfg);
  }
  if (r.confidence_tokens.size() != r.emitted_findings.size())
    throw std::invalid_argument("reward_rollout: sentence/confidence count mismatch");
  if (targets.sentence_flags.size() != r.emitted_findings.size())
    throw std::invalid_argument("reward_rollout: targets inconsistent with rollout");
  if (r.confidence_tokens.empty()) return cfg.format_penalty;
  std::vector<double> p_hats(r.confidence_tokens.size());
  for (std::size_t i = 0; i < r.confidence_tokens.size(); ++i)
    p_hats[i] = r.confidence_tokens[i] / 10.0;
  return reward_sentence(targets.sentence_flags, p_hats, cfg);
}

// Oracle targets for a rollout: continuous report score from set overlap,
// binary per-sentence support flags.
inline CorrectnessTargets make_targets(const Rollout& r, const Study& study) {
  CorrectnessTargets t;
  const std::set<int> emitted(r.emitted_findings.begin(), r.emitted_findings.end());
  t.report_score = green_surrogate(emitted, study.truth);
  t.sentence_flags.reserve(r.emitted_findings.size());
  for (int f : r.emitted_findings)
    t.sentence_flags.push_back(precision_green(f, study.truth));
  return t;
}

}  // namespace conrad
