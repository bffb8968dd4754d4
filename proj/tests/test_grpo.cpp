#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "conrad/grpo.hpp"
#include "conrad/rng.hpp"

using namespace conrad;

namespace {

struct Fixture {
  EnvConfig env;
  PolicyConfig pcfg;
  RewardConfig rcfg;
  PolicyParams params;
  Study study;

  explicit Fixture(Scenario scenario, std::uint64_t seed = 33) {
    env = make_env_config(4, 4, 2, seed);
    pcfg.hidden_dim = 6;
    pcfg.scenario = scenario;
    pcfg.seed = seed;
    params = init_policy(pcfg, env.feature_dim, env.num_findings, env.max_sentences);
    study = sample_study(env, 0);
  }

  Group make_group(int group_size, std::uint64_t seed) const {
    Group g;
    g.study = study;
    for (int k = 0; k < group_size; ++k) {
      Rng rng(derive_seed(seed, k));
      g.rollouts.push_back(rollout(params, study, pcfg, rng));
      const auto targets = make_targets(g.rollouts.back(), study);
      g.rewards.push_back(
          reward_rollout(g.rollouts.back(), targets, pcfg.scenario, rcfg));
    }
    g.advantages = compute_advantages(g.rewards, 1e-8);
    return g;
  }
};

double mean_confidence_kl(const PolicyParams& p, const PolicyParams& ref,
                          const Group& g) {
  double kl_sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : g.rollouts)
    for (const auto& step : r.steps) {
      if (step.kind != StepKind::Confidence) continue;
      const auto lp = detail::state_log_distribution(p, step.state, step.kind, 1.0);
      const auto lq = detail::state_log_distribution(ref, step.state, step.kind, 1.0);
      double kl = 0.0;
      for (std::size_t t = 0; t < lp.size(); ++t)
        kl += std::exp(lp[t]) * (lp[t] - lq[t]);
      kl_sum += kl;
      ++n;
    }
  return kl_sum / static_cast<double>(n);
}

bool advantages_all_zero(const Group& g) {
  for (double a : g.advantages)
    if (a != 0.0) return false;
  return true;
}

}  // namespace

TEST_CASE("group advantages match hand-normalized values", "[grpo]") {
  const auto a = compute_advantages({-10.0, -20.0, -30.0}, 1e-8);
  REQUIRE(a[0] == Catch::Approx(1.224744871391589).margin(1e-12));
  REQUIRE(a[1] == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(a[2] == Catch::Approx(-1.224744871391589).margin(1e-12));

  const auto b = compute_advantages({0.0, -1.0}, 1e-8);
  REQUIRE(b[0] == 1.0);
  REQUIRE(b[1] == -1.0);

  const auto flat = compute_advantages({-5.0, -5.0, -5.0, -5.0}, 1e-8);
  for (double v : flat) REQUIRE(v == 0.0);

  REQUIRE_THROWS_AS(compute_advantages({1.0}, 1e-8), std::invalid_argument);
  REQUIRE_THROWS_AS(compute_advantages({}, 1e-8), std::invalid_argument);
  REQUIRE_THROWS_AS(compute_advantages({1.0, 2.0}, 0.0), std::invalid_argument);
}

TEST_CASE("advantages are zero-mean with unit population spread", "[grpo]") {
  Rng rng(14);
  for (int trial = 0; trial < 10000; ++trial) {
    const int n = 2 + rng.next_index(7);
    std::vector<double> rewards(n);
    for (double& r : rewards) r = -200.0 * rng.next_double();
    const auto adv = compute_advantages(rewards, 1e-8);
    double mean = 0.0;
    for (double v : adv) mean += v;
    mean /= n;
    REQUIRE(std::abs(mean) < 1e-9);
    double var = 0.0;
    for (double v : adv) var += (v - mean) * (v - mean);
    const double spread = std::sqrt(var / n);
    if (spread != 0.0) REQUIRE(std::abs(spread - 1.0) < 1e-6);
  }
}

TEST_CASE("near-identical rewards floor to zero advantages", "[grpo]") {
  Rng rng(15);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> rewards(4);
    for (double& r : rewards) r = -100.0 + 1e-12 * rng.next_double();
    for (double v : compute_advantages(rewards, 1e-8)) REQUIRE(v == 0.0);
  }
}

TEST_CASE("zero advantages and zero kl leave the policy untouched", "[grpo]") {
  Fixture fx(Scenario::ReportLevel);
  Group g = fx.make_group(4, 900);
  g.rewards.assign(4, -50.0);
  g.advantages = compute_advantages(g.rewards, 1e-8);
  REQUIRE(advantages_all_zero(g));
  GrpoConfig cfg;
  cfg.kl_coeff = 0.0;
  const auto before = fx.params;
  const auto stats = grpo_step(fx.params, before, {g}, cfg);
  REQUIRE(fx.params == before);
  REQUIRE(stats.mean_reward == Catch::Approx(-50.0).margin(1e-12));
  REQUIRE(stats.clip_fraction == 0.0);
}

TEST_CASE("grpo_step rejects malformed inputs", "[grpo]") {
  Fixture fx(Scenario::ReportLevel);
  GrpoConfig cfg;
  REQUIRE_THROWS_AS(grpo_step(fx.params, fx.params, {}, cfg),
                    std::invalid_argument);
  Group g = fx.make_group(3, 901);
  g.rewards.pop_back();
  REQUIRE_THROWS_AS(grpo_step(fx.params, fx.params, {g}, cfg),
                    std::invalid_argument);
  GrpoConfig bad;
  bad.group_size = 1;
  REQUIRE_THROWS_AS(validate(bad), std::invalid_argument);
}

TEST_CASE("on-policy update equals the advantage-weighted score gradient", "[grpo]") {
  Fixture fx(Scenario::ReportLevel, 44);
  const Group g = fx.make_group(6, 902);
  REQUIRE(!advantages_all_zero(g));

  GrpoConfig cfg;
  cfg.kl_coeff = 0.0;
  const auto before = fx.params;
  std::vector<double> expected(before.shape.param_count(), 0.0);
  for (std::size_t k = 0; k < g.rollouts.size(); ++k) {
    const auto res =
        logprob_grad(before, g.rollouts[k], confidence_mask(g.rollouts[k]));
    for (std::size_t i = 0; i < expected.size(); ++i)
      expected[i] += g.advantages[k] * res.grad[i];
  }
  const double scale = cfg.learning_rate / static_cast<double>(g.rollouts.size());

  const auto stats = grpo_step(fx.params, before, {g}, cfg);
  REQUIRE(stats.clip_fraction == 0.0);
  REQUIRE(stats.mean_kl == 0.0);
  for (std::size_t i = 0; i < expected.size(); ++i)
    REQUIRE(fx.params.values[i] - before.values[i] ==
            Catch::Approx(scale * expected[i]).margin(1e-10));
}

TEST_CASE("updates never touch the finding head", "[grpo]") {
  Fixture fx(Scenario::SentenceLevel, 45);
  const Group g = fx.make_group(6, 903);
  REQUIRE(!advantages_all_zero(g));
  GrpoConfig cfg;
  const auto before = fx.params;
  grpo_step(fx.params, before, {g}, cfg);
  REQUIRE(!(fx.params == before));
  const PolicyShape& s = fx.params.shape;
  for (std::size_t i = s.wf_offset(); i < s.wc_offset(); ++i)
    REQUIRE(fx.params.values[i] == before.values[i]);
  bool shared_moved = false;
  for (std::size_t i = s.w1_offset(); i < s.wf_offset(); ++i)
    shared_moved = shared_moved || fx.params.values[i] != before.values[i];
  REQUIRE(shared_moved);
}

TEST_CASE("off-policy ratios outside the clip band stop contributing", "[grpo]") {
  Fixture fx(Scenario::ReportLevel, 46);
  Group g = fx.make_group(2, 904);
  g.rewards = {0.0, -1.0};
  g.advantages = compute_advantages(g.rewards, 1e-8);
  for (auto& r : g.rollouts)
    for (auto& step : r.steps)
      if (step.kind == StepKind::Confidence) step.logprob -= std::log(2.0);

  GrpoConfig cfg;
  cfg.kl_coeff = 0.0;
  const auto before = fx.params;
  std::vector<double> expected(before.shape.param_count(), 0.0);
  const auto res =
      logprob_grad(before, g.rollouts[1], confidence_mask(g.rollouts[1]));
  for (std::size_t i = 0; i < expected.size(); ++i)
    expected[i] = (cfg.learning_rate / 2.0) * (-1.0 * 2.0) * res.grad[i];

  const auto stats = grpo_step(fx.params, before, {g}, cfg);
  REQUIRE(stats.clip_fraction == Catch::Approx(0.5).margin(1e-15));
  for (std::size_t i = 0; i < expected.size(); ++i)
    REQUIRE(fx.params.values[i] - before.values[i] ==
            Catch::Approx(expected[i]).margin(1e-10));
}

TEST_CASE("kl stats start at zero and turn positive once the policy moves", "[grpo]") {
  Fixture fx(Scenario::ReportLevel, 47);
  const auto reference = snapshot_reference(fx.params);
  Group g = fx.make_group(6, 905);
  REQUIRE(!advantages_all_zero(g));
  GrpoConfig cfg;
  const auto first = grpo_step(fx.params, reference, {g}, cfg);
  REQUIRE(first.mean_kl == 0.0);
  const auto second = grpo_step(fx.params, reference, {g}, cfg);
  REQUIRE(second.mean_kl > 0.0);
}

TEST_CASE("a strong kl penalty pins the policy to the reference", "[grpo]") {
  Fixture fx(Scenario::ReportLevel, 48);
  const auto reference = snapshot_reference(fx.params);
  const Group g = fx.make_group(6, 906);
  REQUIRE(!advantages_all_zero(g));

  PolicyParams unpinned = fx.params;
  PolicyParams pinned = fx.params;
  GrpoConfig free_cfg;
  free_cfg.kl_coeff = 0.0;
  GrpoConfig pinned_cfg;
  pinned_cfg.kl_coeff = 50.0;
  for (int it = 0; it < 200; ++it) {
    grpo_step(unpinned, reference, {g}, free_cfg);
    grpo_step(pinned, reference, {g}, pinned_cfg);
  }
  const double kl_free = mean_confidence_kl(unpinned, reference, g);
  const double kl_pinned = mean_confidence_kl(pinned, reference, g);
  REQUIRE(kl_free > 1e-4);
  REQUIRE(kl_pinned < kl_free);
}

TEST_CASE("extra epochs per batch change the resulting parameters", "[grpo]") {
  Fixture fx(Scenario::ReportLevel, 49);
  const Group g = fx.make_group(6, 907);
  REQUIRE(!advantages_all_zero(g));
  PolicyParams one = fx.params;
  PolicyParams two = fx.params;
  GrpoConfig cfg;
  grpo_step(one, fx.params, {g}, cfg);
  cfg.epochs_per_batch = 2;
  grpo_step(two, fx.params, {g}, cfg);
  REQUIRE(!(one == two));
}

TEST_CASE("eval units use held-out studies and grid confidences", "[grpo]") {
  Fixture fx(Scenario::ReportLevel, 50);
  const auto unit =
      sample_eval_unit(fx.params, fx.env, fx.pcfg, kEvalStudyBase + 3, 777);
  REQUIRE(unit.study.id == kEvalStudyBase + 3);
  REQUIRE(unit.rollout.confidence_tokens.size() == 1u);
  REQUIRE(unit.rollout.confidence_tokens[0] <= kMaxConfidenceLevel);

  const auto again =
      sample_eval_unit(fx.params, fx.env, fx.pcfg, kEvalStudyBase + 3, 777);
  REQUIRE(again.rollout.confidence_tokens == unit.rollout.confidence_tokens);
  REQUIRE(again.rollout.emitted_findings == unit.rollout.emitted_findings);

  std::vector<CalibrationRecord> records;
  append_records(unit, Scenario::ReportLevel, records);
  REQUIRE(records.size() == 1u);
  REQUIRE(records[0].confidence ==
          Catch::Approx(unit.rollout.confidence_tokens[0] / 10.0).margin(1e-15));
  REQUIRE(records[0].target ==
          Catch::Approx(green_surrogate(
                            {unit.rollout.emitted_findings.begin(),
                             unit.rollout.emitted_findings.end()},
                            unit.study.truth))
              .margin(1e-12));
}

TEST_CASE("sentence eval units yield one record per sentence", "[grpo]") {
  Fixture fx(Scenario::SentenceLevel, 51);
  std::vector<CalibrationRecord> records;
  for (int i = 0; i < 20; ++i) {
    const auto unit =
        sample_eval_unit(fx.params, fx.env, fx.pcfg, kEvalStudyBase + i, 778);
    REQUIRE(unit.rollout.confidence_tokens.size() ==
            unit.targets.sentence_flags.size());
    append_records(unit, Scenario::SentenceLevel, records);
  }
  for (const auto& rec : records) {
    REQUIRE((rec.target == 0.0 || rec.target == 1.0));
    REQUIRE(rec.confidence >= 0.0);
    REQUIRE(rec.confidence <= 1.0);
  }
}

TEST_CASE("probe ece is deterministic and bounded", "[grpo]") {
  Fixture fx(Scenario::ReportLevel, 52);
  const double a = probe_ece(fx.params, fx.env, fx.pcfg, 50, 999);
  const double b = probe_ece(fx.params, fx.env, fx.pcfg, 50, 999);
  REQUIRE(a == b);
  REQUIRE(a >= 0.0);
  REQUIRE(a <= 1.0);
}

TEST_CASE("training with zero studies returns the untouched init", "[grpo]") {
  EnvConfig env = make_env_config(4, 4, 2, 61);
  PolicyConfig pcfg;
  pcfg.hidden_dim = 6;
  pcfg.seed = 61;
  RewardConfig rcfg;
  GrpoConfig gcfg;
  gcfg.num_studies = 0;
  const auto result = train(env, pcfg, rcfg, gcfg, 5);
  REQUIRE(result.batches_completed == 0);
  REQUIRE(result.history.empty());
  REQUIRE_FALSE(result.early_stopped);
  REQUIRE(result.params ==
          init_policy(pcfg, env.feature_dim, env.num_findings, env.max_sentences));
  REQUIRE(result.reference == result.params);
}

TEST_CASE("training is bit-reproducible", "[grpo]") {
  EnvConfig env = make_env_config(4, 4, 2, 62);
  PolicyConfig pcfg;
  pcfg.hidden_dim = 6;
  pcfg.seed = 62;
  RewardConfig rcfg;
  GrpoConfig gcfg;
  gcfg.num_studies = 30;
  gcfg.probe_interval = 10;
  gcfg.probe_size = 20;
  const auto a = train(env, pcfg, rcfg, gcfg, 9);
  const auto b = train(env, pcfg, rcfg, gcfg, 9);
  REQUIRE(a.params == b.params);
  REQUIRE(a.batches_completed == b.batches_completed);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    REQUIRE(a.history[i].mean_reward == b.history[i].mean_reward);
    REQUIRE(a.history[i].mean_kl == b.history[i].mean_kl);
    REQUIRE(a.history[i].has_probe == b.history[i].has_probe);
    REQUIRE(a.history[i].probe_ece == b.history[i].probe_ece);
  }
}

TEST_CASE("an unimprovable probe triggers early stopping", "[grpo]") {
  EnvConfig env = make_env_config(4, 4, 2, 63);
  PolicyConfig pcfg;
  pcfg.hidden_dim = 6;
  pcfg.seed = 63;
  RewardConfig rcfg;
  GrpoConfig gcfg;
  gcfg.num_studies = 1000;
  gcfg.probe_interval = 5;
  gcfg.probe_size = 10;
  gcfg.probe_min_delta = 1e9;
  gcfg.probe_patience = 3;
  const auto result = train(env, pcfg, rcfg, gcfg, 11);
  REQUIRE(result.early_stopped);
  REQUIRE(result.batches_completed == 20);
  REQUIRE(result.history.size() == 20u);
  REQUIRE(result.history.back().has_probe);
  int probes = 0;
  for (const auto& row : result.history) probes += row.has_probe ? 1 : 0;
  REQUIRE(probes == 4);
}

TEST_CASE("reference refresh follows the configured interval", "[grpo]") {
  EnvConfig env = make_env_config(4, 4, 2, 64);
  PolicyConfig pcfg;
  pcfg.hidden_dim = 6;
  pcfg.seed = 64;
  RewardConfig rcfg;
  GrpoConfig gcfg;
  gcfg.num_studies = 3;
  gcfg.probe_interval = 100;

  const auto frozen = train(env, pcfg, rcfg, gcfg, 13);
  REQUIRE(frozen.reference ==
          init_policy(pcfg, env.feature_dim, env.num_findings, env.max_sentences));
  REQUIRE(!(frozen.reference == frozen.params));

  gcfg.reference_refresh_interval = 1;
  const auto refreshed = train(env, pcfg, rcfg, gcfg, 13);
  REQUIRE(refreshed.reference == refreshed.params);
}

TEST_CASE("report training improves held-out calibration", "[grpo]") {
  EnvConfig env = make_env_config(8, 6, 4, 2026);
  PolicyConfig pcfg;
  pcfg.hidden_dim = 16;
  pcfg.scenario = Scenario::ReportLevel;
  pcfg.seed = 2026;
  RewardConfig rcfg;
  GrpoConfig gcfg;
  gcfg.num_studies = 400;
  gcfg.probe_interval = 200;
  gcfg.probe_size = 100;

  const auto initial =
      init_policy(pcfg, env.feature_dim, env.num_findings, env.max_sentences);
  const double before = probe_ece(initial, env, pcfg, 200, 424242);
  const auto result = train(env, pcfg, rcfg, gcfg, 17);
  const double after = probe_ece(result.params, env, pcfg, 200, 424242);
  REQUIRE(after < before - 0.02);

  double early = 0.0, late = 0.0;
  for (int b = 0; b < 50; ++b) {
    early += result.history[b].mean_reward;
    late += result.history[result.history.size() - 50 + b].mean_reward;
  }
  REQUIRE(late > early);
}
