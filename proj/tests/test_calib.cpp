#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "conrad/calib.hpp"
#include "conrad/rng.hpp"
#include "oracles.hpp"

using namespace conrad;

namespace {

std::vector<CalibrationRecord> random_records(Rng& rng, int n, bool binary_targets) {
  std::vector<CalibrationRecord> records(n);
  for (auto& r : records) {
    r.confidence = rng.next_double();
    r.target = binary_targets ? static_cast<double>(rng.next_bool())
                              : rng.next_double();
  }
  return records;
}

}  // namespace

TEST_CASE("ece matches hand-computed examples", "[calib]") {
  const std::vector<CalibrationRecord> quad{
      {0.7, 1.0}, {0.7, 1.0}, {0.7, 0.0}, {0.7, 1.0}};
  REQUIRE(ece(quad) == Catch::Approx(0.05).margin(1e-12));
  const std::vector<CalibrationRecord> perfect{{0.1, 0.1}, {0.55, 0.55}, {1.0, 1.0}};
  REQUIRE(ece(perfect) == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(ece({{1.0, 0.0}}) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("ece rejects empty and out-of-range input", "[calib]") {
  REQUIRE_THROWS_AS(ece({}), std::invalid_argument);
  REQUIRE_THROWS_AS(ece({{1.2, 0.5}}), std::invalid_argument);
  REQUIRE_THROWS_AS(ece({{0.5, -0.1}}), std::invalid_argument);
}

TEST_CASE("ece is permutation invariant", "[calib]") {
  Rng rng(5);
  auto records = random_records(rng, 40, false);
  const double before = ece(records);
  std::reverse(records.begin(), records.end());
  REQUIRE(ece(records) == before);
}

TEST_CASE("confidence 1.0 lands in the last bin", "[calib]") {
  const auto bins = reliability_curve({{1.0, 1.0}, {0.95, 0.0}}, 10);
  REQUIRE(bins.size() == 10u);
  REQUIRE(bins[9].count == 2u);
  for (int b = 0; b < 9; ++b) REQUIRE(bins[b].count == 0u);
}

TEST_CASE("reliability bins partition records and reproduce ece exactly", "[calib]") {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const auto records = random_records(rng, 2 + rng.next_index(60), false);
    const auto bins = reliability_curve(records);
    std::size_t total = 0;
    double recomputed = 0.0;
    for (const auto& bin : bins) {
      total += bin.count;
      if (bin.count > 0)
        recomputed += (static_cast<double>(bin.count) / records.size()) *
                      std::abs(bin.mean_target - bin.mean_confidence);
    }
    REQUIRE(total == records.size());
    REQUIRE(std::abs(recomputed - ece(records)) < 1e-12);
  }
}

TEST_CASE("perfect records yield zero gap in every nonempty bin", "[calib]") {
  Rng rng(7);
  std::vector<CalibrationRecord> records;
  for (int i = 0; i < 30; ++i) {
    const double c = rng.next_double();
    records.push_back({c, c});
  }
  for (const auto& bin : reliability_curve(records))
    if (bin.count > 0)
      REQUIRE(std::abs(bin.mean_target - bin.mean_confidence) < 1e-12);
}

TEST_CASE("all records in one bin leaves the others empty", "[calib]") {
  const std::vector<CalibrationRecord> records{{0.42, 0.1}, {0.44, 0.9}, {0.49, 0.5}};
  int nonempty = 0;
  for (const auto& bin : reliability_curve(records)) nonempty += bin.count > 0;
  REQUIRE(nonempty == 1);
}

TEST_CASE("pearson handles perfect, inverse, and degenerate inputs", "[calib]") {
  REQUIRE(pearson({{0.0, 0.0}, {0.5, 0.5}, {1.0, 1.0}}) ==
          Catch::Approx(1.0).margin(1e-12));
  REQUIRE(pearson({{0.0, 1.0}, {1.0, 0.0}}) == Catch::Approx(-1.0).margin(1e-12));
  REQUIRE_THROWS_AS(pearson({{0.7, 0.1}, {0.7, 0.9}}), std::invalid_argument);
  REQUIRE_THROWS_AS(pearson({{0.1, 0.5}, {0.9, 0.5}}), std::invalid_argument);
  REQUIRE_THROWS_AS(pearson({{0.5, 0.5}}), std::invalid_argument);
}

TEST_CASE("spearman is invariant under monotone transforms", "[calib]") {
  Rng rng(8);
  auto records = random_records(rng, 50, false);
  const double base = spearman(records);
  auto squared = records;
  for (auto& r : squared) r.confidence *= r.confidence;
  REQUIRE(std::abs(spearman(squared) - base) < 1e-12);
  REQUIRE(spearman({{0.0, 0.0}, {0.5, 0.5}, {1.0, 1.0}}) ==
          Catch::Approx(1.0).margin(1e-12));
  REQUIRE(spearman({{0.1, 0.9}, {0.2, 0.8}, {0.3, 0.7}}) ==
          Catch::Approx(-1.0).margin(1e-12));
}

TEST_CASE("auroc handles perfect, tied, and reversed rankings", "[calib]") {
  REQUIRE(auroc({{0.9, 1.0}, {0.8, 1.0}, {0.1, 0.0}}) ==
          Catch::Approx(1.0).margin(1e-12));
  REQUIRE(auroc({{0.5, 1.0}, {0.5, 0.0}, {0.5, 1.0}}) ==
          Catch::Approx(0.5).margin(1e-12));
  REQUIRE(auroc({{0.2, 1.0}, {0.9, 0.0}}) == Catch::Approx(0.0).margin(1e-12));
  REQUIRE_THROWS_AS(auroc({{0.2, 1.0}, {0.9, 1.0}}), std::invalid_argument);
  REQUIRE_THROWS_AS(auroc({{0.2, 0.5}, {0.9, 1.0}}), std::invalid_argument);
}

TEST_CASE("auroc is invariant under strictly increasing transforms", "[calib]") {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    auto records = random_records(rng, 30, true);
    bool has_pos = false, has_neg = false;
    for (const auto& r : records) (r.target == 1.0 ? has_pos : has_neg) = true;
    if (!has_pos || !has_neg) continue;
    const double base = auroc(records);
    auto transformed = records;
    for (auto& r : transformed) r.confidence = r.confidence * r.confidence;
    REQUIRE(std::abs(auroc(transformed) - base) < 1e-12);
  }
}

TEST_CASE("brier matches squared-error examples", "[calib]") {
  REQUIRE(brier({{0.3, 0.3}, {0.9, 0.9}}) == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(brier({{1.0, 0.0}}) == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(brier({{0.7, 1.0}}) == Catch::Approx(0.09).margin(1e-12));
}

TEST_CASE("confidence_histogram counts grid levels and rejects off-grid", "[calib]") {
  std::vector<CalibrationRecord> spike(25, {1.0, 1.0});
  const auto counts = confidence_histogram(spike);
  REQUIRE(counts.size() == 11u);
  for (int level = 0; level < 10; ++level) REQUIRE(counts[level] == 0u);
  REQUIRE(counts[10] == 25u);

  REQUIRE(confidence_histogram({}) == std::vector<std::size_t>(11, 0));

  std::vector<CalibrationRecord> mixed;
  Rng rng(10);
  for (int i = 0; i < 200; ++i)
    mixed.push_back({rng.next_index(11) / 10.0, 0.0});
  std::size_t total = 0;
  for (std::size_t c : confidence_histogram(mixed)) total += c;
  REQUIRE(total == mixed.size());

  REQUIRE_THROWS_AS(confidence_histogram({{0.55, 0.0}}), std::invalid_argument);
}

TEST_CASE("metrics agree with brute-force references on random inputs", "[calib]") {
  Rng rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 2 + rng.next_index(49);
    const auto records = random_records(rng, n, false);
    REQUIRE(std::abs(ece(records) - oracle::ece_direct(records, 10)) < 1e-12);
    REQUIRE(std::abs(pearson(records) - oracle::pearson_of_records(records)) < 1e-12);
    REQUIRE(std::abs(spearman(records) - oracle::spearman_direct(records)) < 1e-12);

    auto binary = random_records(rng, n, true);
    binary.push_back({rng.next_double(), 1.0});
    binary.push_back({rng.next_double(), 0.0});
    REQUIRE(std::abs(auroc(binary) - oracle::auroc_pairwise(binary)) < 1e-12);
  }
}
