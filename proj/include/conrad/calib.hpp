#pragma once
// Calibration and discrimination metrics over (confidence, target) records:
// expected calibration error with reliability bins, Pearson and Spearman
// correlation, Mann-Whitney AUROC, Brier score, and the 11-level verbalized
// confidence histogram. All functions are pure.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace conrad {

struct CalibrationRecord {
  double confidence = 0.0;  // in [0, 1]
  double target = 0.0;      // in [0, 1]: continuous score, binary flag, or normalized rating
};

struct ReliabilityBin {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
  double mean_confidence = 0.0;  // defined only when count > 0
  double mean_target = 0.0;      // defined only when count > 0
};

namespace detail {

inline void check_records(const std::vector<CalibrationRecord>& records,
                          const char* op) {
  if (records.empty())
    throw std::invalid_argument(std::string(op) + ": empty record list");
  for (const auto& r : records) {
    if (!(r.confidence >= 0.0 && r.confidence <= 1.0))
      throw std::invalid_argument(std::string(op) + ": confidence outside [0,1]");
    if (!(r.target >= 0.0 && r.target <= 1.0))
      throw std::invalid_argument(std::string(op) + ": target outside [0,1]");
  }
}

// Bin index under equal-width binning with a right-closed last bin, so
// confidence 1.0 lands in bin num_bins-1.
inline std::size_t bin_index(double confidence, int num_bins) {
  const auto idx = static_cast<std::size_t>(confidence * num_bins);
  const auto last = static_cast<std::size_t>(num_bins - 1);
  return idx > last ? last : idx;
}

// Average ranks (1-based), ties sharing the mean of their rank range.
inline std::vector<double> average_ranks(const std::vector<double>& values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double mean_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = mean_rank;
    i = j + 1;
  }
  return ranks;
}

inline double pearson_raw(const std::vector<double>& x,
                          const std::vector<double>& y, const char* op) {
  const std::size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0 || syy == 0.0)
    throw std::invalid_argument(std::string(op) + ": zero variance input");
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace detail

inline std::vector<ReliabilityBin> reliability_curve(
    const std::vector<CalibrationRecord>& records, int num_bins = 10) {
  detail::check_records(records, "reliability_curve");
  if (num_bins < 1)
    throw std::invalid_argument("reliability_curve: num_bins must be >= 1");
  std::vector<ReliabilityBin> bins(static_cast<std::size_t>(num_bins));
  for (int b = 0; b < num_bins; ++b) {
    bins[b].lower = static_cast<double>(b) / num_bins;
    bins[b].upper = static_cast<double>(b + 1) / num_bins;
  }
  for (const auto& r : records) {
    auto& bin = bins[detail::bin_index(r.confidence, num_bins)];
    ++bin.count;
    bin.mean_confidence += r.confidence;
    bin.mean_target += r.target;
  }
  for (auto& bin : bins) {
    if (bin.count > 0) {
      bin.mean_confidence /= static_cast<double>(bin.count);
      bin.mean_target /= static_cast<double>(bin.count);
    }
  }
  return bins;
}

inline double ece(const std::vector<CalibrationRecord>& records,
                  int num_bins = 10) {
  const auto bins = reliability_curve(records, num_bins);
  const double n = static_cast<double>(records.size());
  double total = 0.0;
  for (const auto& bin : bins) {
    if (bin.count == 0) continue;
    total += (static_cast<double>(bin.count) / n) *
             std::abs(bin.mean_target - bin.mean_confidence);
  }
  return total;
}

inline double pearson(const std::vector<CalibrationRecord>& records) {
  detail::check_records(records, "pearson");
  if (records.size() < 2)
    throw std::invalid_argument("pearson: need at least 2 records");
  std::vector<double> x(records.size()), y(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    x[i] = records[i].confidence;
    y[i] = records[i].target;
  }
  return detail::pearson_raw(x, y, "pearson");
}

inline double spearman(const std::vector<CalibrationRecord>& records) {
  detail::check_records(records, "spearman");
  if (records.size() < 2)
    throw std::invalid_argument("spearman: need at least 2 records");
  std::vector<double> x(records.size()), y(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    x[i] = records[i].confidence;
    y[i] = records[i].target;
  }
  return detail::pearson_raw(detail::average_ranks(x), detail::average_ranks(y),
                             "spearman");
}

// Mann-Whitney AUROC via average ranks: probability a random positive
// outranks a random negative, ties counted one half. Targets must be 0 or 1.
inline double auroc(const std::vector<CalibrationRecord>& records) {
  detail::check_records(records, "auroc");
  std::vector<double> conf(records.size());
  std::size_t positives = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const double t = records[i].target;
    if (t != 0.0 && t != 1.0)
      throw std::invalid_argument("auroc: targets must be binary");
    conf[i] = records[i].confidence;
    positives += (t == 1.0);
  }
  const std::size_t negatives = records.size() - positives;
  if (positives == 0 || negatives == 0)
    throw std::invalid_argument("auroc: need both classes");
  const auto ranks = detail::average_ranks(conf);
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (records[i].target == 1.0) rank_sum += ranks[i];
  const double p = static_cast<double>(positives);
  const double u = rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(negatives));
}

inline double brier(const std::vector<CalibrationRecord>& records) {
  detail::check_records(records, "brier");
  double total = 0.0;
  for (const auto& r : records) {
    const double d = r.confidence - r.target;
    total += d * d;
  }
  return total / static_cast<double>(records.size());
}

// Counts per verbalized confidence level 0..10. Confidences must sit on the
// 11-point grid {0.0, 0.1, ..., 1.0} up to round-off. Empty input is a valid
// all-zero histogram.
inline std::vector<std::size_t> confidence_histogram(
    const std::vector<CalibrationRecord>& records) {
  std::vector<std::size_t> counts(11, 0);
  for (const auto& r : records) {
    const double scaled = r.confidence * 10.0;
    const int level = static_cast<int>(std::lround(scaled));
    if (level < 0 || level > 10 || std::abs(scaled - level) > 1e-9)
      throw std::invalid_argument("confidence_histogram: off-grid confidence");
    ++counts[static_cast<std::size_t>(level)];
  }
  return counts;
}

}  // namespace conrad
