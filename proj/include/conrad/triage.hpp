#pragma once
// Confidence-based sentence triage: threshold filtering with
// precision/coverage accounting, the risk-coverage table over the standard
// threshold set, and rater-panel aggregation rules for simulated clinical
// review. The top threshold row (1.0) retains by equality, which coincides
// with >= because grid confidences never exceed 1.

#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <vector>

#include "conrad/env.hpp"

namespace conrad {

struct SentenceEntry {
  double confidence = 0.0;  // grid value in {0, 0.1, ..., 1.0}
  int correct = 0;          // {0, 1}
  std::int64_t study_id = 0;
  int sentence_index = 0;
};

struct FilterRow {
  double threshold = 0.0;
  std::size_t retained_count = 0;
  std::optional<double> precision;  // empty when nothing is retained
  double coverage = 0.0;
};

namespace detail {
inline void check_entries(const std::vector<SentenceEntry>& entries,
                          const char* op) {
  if (entries.empty())
    throw std::invalid_argument(std::string(op) + ": empty entry list");
  for (const auto& e : entries) {
    if (!(e.confidence >= 0.0 && e.confidence <= 1.0))
      throw std::invalid_argument(std::string(op) + ": confidence outside [0,1]");
    if (e.correct != 0 && e.correct != 1)
      throw std::invalid_argument(std::string(op) + ": correct must be 0 or 1");
  }
}
}  // namespace detail

inline FilterRow filter_by_threshold(const std::vector<SentenceEntry>& entries,
                                     double tau) {
  detail::check_entries(entries, "filter_by_threshold");
  FilterRow row;
  row.threshold = tau;
  std::size_t correct = 0;
  for (const auto& e : entries) {
    if (e.confidence < tau) continue;
    ++row.retained_count;
    correct += static_cast<std::size_t>(e.correct);
  }
  if (row.retained_count > 0)
    row.precision = static_cast<double>(correct) /
                    static_cast<double>(row.retained_count);
  row.coverage = static_cast<double>(row.retained_count) /
                 static_cast<double>(entries.size());
  return row;
}

inline std::vector<FilterRow> risk_coverage_table(
    const std::vector<SentenceEntry>& entries,
    const std::vector<double>& thresholds = {0.0, 0.6, 0.8, 1.0}) {
  detail::check_entries(entries, "risk_coverage_table");
  std::vector<FilterRow> rows;
  rows.reserve(thresholds.size());
  for (double tau : thresholds) rows.push_back(filter_by_threshold(entries, tau));
  return rows;
}

// Per-study sentence bundle for the companion report-quality column of the
// filter table.
struct StudySentenceSet {
  std::int64_t study_id = 0;
  std::vector<int> findings;
  std::vector<double> confidences;
  std::set<int> truth;
};

// Mean green_surrogate of the retained finding set against truth, averaged
// over all studies (studies with nothing retained contribute the empty-set
// score).
inline double mean_filtered_report_score(
    const std::vector<StudySentenceSet>& studies, double tau) {
  if (studies.empty())
    throw std::invalid_argument("mean_filtered_report_score: empty study list");
  double total = 0.0;
  for (const auto& s : studies) {
    if (s.findings.size() != s.confidences.size())
      throw std::invalid_argument(
          "mean_filtered_report_score: findings/confidences length mismatch");
    std::set<int> retained;
    for (std::size_t i = 0; i < s.findings.size(); ++i)
      if (s.confidences[i] >= tau) retained.insert(s.findings[i]);
    total += green_surrogate(retained, s.truth);
  }
  return total / static_cast<double>(studies.size());
}

inline void check_panel(const RaterPanel& panel, const char* op) {
  if (panel.scores.empty())
    throw std::invalid_argument(std::string(op) + ": empty panel");
  const std::size_t raters = panel.scores.front().size();
  if (raters == 0) throw std::invalid_argument(std::string(op) + ": no raters");
  for (const auto& row : panel.scores) {
    if (row.size() != raters)
      throw std::invalid_argument(std::string(op) + ": ragged panel");
    for (int score : row)
      if (score < 1 || score > 5)
        throw std::invalid_argument(std::string(op) + ": score outside 1..5");
  }
}

// Mean Likert score over all (sentence, rater) cells, mapped to [0,1] by
// (mean - 1) / 4.
inline double aggregate_mean(const RaterPanel& panel) {
  check_panel(panel, "aggregate_mean");
  double total = 0.0;
  std::size_t cells = 0;
  for (const auto& row : panel.scores) {
    for (int score : row) total += score;
    cells += row.size();
  }
  return (total / static_cast<double>(cells) - 1.0) / 4.0;
}

// 1 iff every sentence receives a score of at least 4 from a strict
// majority of raters; ties on even panels fail.
inline int aggregate_all_accepted(const RaterPanel& panel) {
  check_panel(panel, "aggregate_all_accepted");
  for (const auto& row : panel.scores) {
    std::size_t accepting = 0;
    for (int score : row) accepting += (score >= 4);
    if (2 * accepting <= row.size()) return 0;
  }
  return 1;
}

}  // namespace conrad
