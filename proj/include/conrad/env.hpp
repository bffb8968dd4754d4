#pragma once
// Synthetic study environment and oracle correctness scorers.
//
// A Study is a feature vector plus a latent ground-truth set of finding
// indices. The truth rule is a fixed bank of linear classifiers drawn once
// from the config seed, so correctness is a deterministic, learnable
// function of the features. Report quality is scored by a set-overlap
// surrogate; per-sentence support is plain membership. A seeded Likert
// rater panel simulator drives the clinical aggregation code.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <stdexcept>
#include <vector>

#include "conrad/rng.hpp"

namespace conrad {

namespace stream_tag {
// Purpose tags for derive_seed. Keep values stable: they are part of the
// reproducibility contract.
inline constexpr std::uint64_t kTruthRule = 0x01;
inline constexpr std::uint64_t kStudyFeatures = 0x02;
inline constexpr std::uint64_t kRaterPanel = 0x03;
inline constexpr std::uint64_t kPolicyInit = 0x04;
inline constexpr std::uint64_t kTrainRollout = 0x05;
inline constexpr std::uint64_t kProbe = 0x06;
inline constexpr std::uint64_t kEvalRollout = 0x07;
inline constexpr std::uint64_t kBaselineRollout = 0x08;
inline constexpr std::uint64_t kSelfConsistency = 0x09;
inline constexpr std::uint64_t kPTrueHead = 0x0a;
inline constexpr std::uint64_t kEnvSeed = 0x0b;
inline constexpr std::uint64_t kPolicySeed = 0x0c;
inline constexpr std::uint64_t kTrainSeed = 0x0d;
inline constexpr std::uint64_t kProbeData = 0x0e;
}  // namespace stream_tag

struct EnvConfig {
  int feature_dim = 16;
  int num_findings = 12;   // F
  int max_sentences = 6;
  std::vector<double> truth_weights;  // F x feature_dim, row-major
  std::vector<double> truth_bias;     // F
  std::vector<double> shift_offset;   // feature_dim; all zero in-distribution
  std::uint64_t seed = 0;
};

inline void validate(const EnvConfig& cfg) {
  if (cfg.feature_dim < 1) throw std::invalid_argument("EnvConfig: feature_dim must be >= 1");
  if (cfg.num_findings < 2) throw std::invalid_argument("EnvConfig: num_findings must be >= 2");
  if (cfg.max_sentences < 1) throw std::invalid_argument("EnvConfig: max_sentences must be >= 1");
  const std::size_t fd = static_cast<std::size_t>(cfg.feature_dim);
  const std::size_t nf = static_cast<std::size_t>(cfg.num_findings);
  if (cfg.truth_weights.size() != nf * fd)
    throw std::invalid_argument("EnvConfig: truth_weights shape mismatch");
  if (cfg.truth_bias.size() != nf)
    throw std::invalid_argument("EnvConfig: truth_bias shape mismatch");
  if (cfg.shift_offset.size() != fd)
    throw std::invalid_argument("EnvConfig: shift_offset shape mismatch");
  for (double v : cfg.truth_weights)
    if (!std::isfinite(v)) throw std::invalid_argument("EnvConfig: non-finite truth weight");
  for (double v : cfg.truth_bias)
    if (!std::isfinite(v)) throw std::invalid_argument("EnvConfig: non-finite truth bias");
  for (double v : cfg.shift_offset)
    if (!std::isfinite(v)) throw std::invalid_argument("EnvConfig: non-finite shift offset");
}

// Builds a config whose per-finding linear truth rule is drawn once from
// `seed`. Each weight row mixes a direction shared by every finding with a
// per-finding direction (half the logit variance each), so finding
// prevalences co-vary across studies the way abnormality burden varies
// across patients; rows are scaled so the truth logit of a standard-normal
// feature vector has unit variance. The bias spread controls how much the
// base rate of each finding differs within the bank.
inline EnvConfig make_env_config(int feature_dim = 16, int num_findings = 12,
                                 int max_sentences = 6, std::uint64_t seed = 0) {
  EnvConfig cfg;
  cfg.feature_dim = feature_dim;
  cfg.num_findings = num_findings;
  cfg.max_sentences = max_sentences;
  cfg.seed = seed;
  if (feature_dim < 1 || num_findings < 2 || max_sentences < 1)
    throw std::invalid_argument("make_env_config: bad dimensions");
  Rng rng(derive_seed(seed, stream_tag::kTruthRule));
  const double weight_scale = 1.0 / std::sqrt(static_cast<double>(feature_dim));
  const double mix = std::sqrt(0.5);
  std::vector<double> shared(feature_dim);
  for (double& u : shared) u = weight_scale * rng.next_gaussian();
  cfg.truth_weights.resize(static_cast<std::size_t>(num_findings) * feature_dim);
  for (int j = 0; j < num_findings; ++j)
    for (int i = 0; i < feature_dim; ++i)
      cfg.truth_weights[static_cast<std::size_t>(j) * feature_dim + i] =
          mix * (shared[i] + weight_scale * rng.next_gaussian());
  cfg.truth_bias.resize(num_findings);
  for (double& b : cfg.truth_bias) b = 0.75 * rng.next_gaussian();
  cfg.shift_offset.assign(feature_dim, 0.0);
  return cfg;
}

struct Study {
  std::int64_t id = 0;
  std::vector<double> features;
  std::set<int> truth;  // subset of {0, ..., F-1}
};

struct CorrectnessTargets {
  double report_score = 0.0;        // s in [0, 1]
  std::vector<int> sentence_flags;  // f_i in {0, 1}, one per finding sentence
};

// Per-sentence, per-rater Likert scores in {1..5}; rectangular.
struct RaterPanel {
  std::vector<std::vector<int>> scores;  // [sentence][rater]
};

// Draws the study at `index`: standard-normal features from the stream
// seeded by (cfg.seed, index), shifted by cfg.shift_offset, then labeled by
// the fixed truth rule applied to the shifted features.
inline Study sample_study(const EnvConfig& cfg, std::int64_t index) {
  if (index < 0) throw std::invalid_argument("sample_study: index must be >= 0");
  validate(cfg);
  Study study;
  study.id = index;
  study.features.resize(cfg.feature_dim);
  Rng rng(derive_seed(cfg.seed, stream_tag::kStudyFeatures,
                      static_cast<std::uint64_t>(index)));
  for (int i = 0; i < cfg.feature_dim; ++i)
    study.features[i] = rng.next_gaussian() + cfg.shift_offset[i];
  for (int j = 0; j < cfg.num_findings; ++j) {
    double logit = cfg.truth_bias[j];
    const double* row = cfg.truth_weights.data() +
                        static_cast<std::size_t>(j) * cfg.feature_dim;
    for (int i = 0; i < cfg.feature_dim; ++i) logit += row[i] * study.features[i];
    if (logit > 0.0) study.truth.insert(j);
  }
  return study;
}

// Returns cfg with shift_offset replaced (not composed); the truth rule is
// untouched, so this models covariate shift under an unchanged labeling.
inline EnvConfig shift_distribution(const EnvConfig& cfg,
                                    const std::vector<double>& offset) {
  if (offset.size() != static_cast<std::size_t>(cfg.feature_dim))
    throw std::invalid_argument("shift_distribution: offset dimension mismatch");
  for (double v : offset)
    if (!std::isfinite(v)) throw std::invalid_argument("shift_distribution: non-finite offset");
  EnvConfig shifted = cfg;
  shifted.shift_offset = offset;
  return shifted;
}

// Set-overlap report score: matched findings over matched + spurious +
// omitted, i.e. |emitted ∩ truth| / |emitted ∪ truth|. Both empty scores 1.
inline double green_surrogate(const std::set<int>& emitted,
                              const std::set<int>& truth) {
  if (emitted.empty() && truth.empty()) return 1.0;
  std::size_t matched = 0;
  for (int f : emitted) matched += truth.count(f);
  const std::size_t united = emitted.size() + truth.size() - matched;
  return static_cast<double>(matched) / static_cast<double>(united);
}

// Per-sentence support: 1 iff the finding appears in the reference set.
inline int precision_green(int finding, const std::set<int>& truth) {
  return truth.count(finding) ? 1 : 0;
}

// Simulates a Likert panel: base score 5 for supported findings, 1 for
// unsupported; each rater independently moves one step up or down with
// probability `noise`, clamped to {1..5}. Deterministic given seed.
inline RaterPanel simulate_raters(const std::vector<int>& emitted,
                                  const std::set<int>& truth, int num_raters,
                                  double noise, std::uint64_t seed) {
  if (num_raters < 1) throw std::invalid_argument("simulate_raters: num_raters must be >= 1");
  if (noise < 0.0 || noise > 1.0)
    throw std::invalid_argument("simulate_raters: noise must be in [0, 1]");
  RaterPanel panel;
  Rng rng(derive_seed(seed, stream_tag::kRaterPanel));
  panel.scores.reserve(emitted.size());
  for (int finding : emitted) {
    const int base = truth.count(finding) ? 5 : 1;
    std::vector<int> row(num_raters);
    for (int r = 0; r < num_raters; ++r) {
      int score = base;
      if (rng.next_double() < noise) score += rng.next_bool() ? 1 : -1;
      row[r] = std::clamp(score, 1, 5);
    }
    panel.scores.push_back(std::move(row));
  }
  return panel;
}

}  // namespace conrad
