#pragma once

// Ranking and classification metrics. Undefined cases (a single class for
// ROC-AUC, no positives for PR-AUC) come back as std::nullopt.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "maxplus/tensor.hpp"

namespace maxplus {

namespace detail {
inline void require_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw ContractViolation(std::string(what) + ": scores and labels differ in length");
}
}  // namespace detail

/// Mann-Whitney form: P(score of random positive > random negative), ties ½.
inline std::optional<double> roc_auc(std::span<const double> scores, std::span<const int> labels) {
  detail::require_same_length(scores.size(), labels.size(), "roc_auc");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });

  double pos = 0, rank_sum = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t t = i; t < j; ++t)
      if (labels[order[t]] != 0) {
        pos += 1;
        rank_sum += avg_rank;
      }
    i = j;
  }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0 || neg == 0) return std::nullopt;
  return (rank_sum - pos * (pos + 1) / 2) / (pos * neg);
}

/// Average precision: Σ over distinct thresholds of precision × recall gain.
/// Tied scores enter together as one threshold.
inline std::optional<double> pr_auc(std::span<const double> scores, std::span<const int> labels) {
  detail::require_same_length(scores.size(), labels.size(), "pr_auc");
  const std::size_t n = scores.size();
  double total_pos = 0;
  for (int l : labels) total_pos += l != 0;
  if (total_pos == 0) return std::nullopt;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });

  double tp = 0, fp = 0, ap = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    double group_tp = 0;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      if (labels[order[j]] != 0) group_tp += 1;
      else fp += 1;
      ++j;
    }
    tp += group_tp;
    if (group_tp > 0) ap += (tp / (tp + fp)) * (group_tp / total_pos);
    i = j;
  }
  return ap;
}

namespace detail {
template <typename Metric>
std::optional<double> macro(const Tensor& scores, const Tensor& targets, Metric metric) {
  if (scores.shape() != targets.shape()) throw ContractViolation("macro metric: scores and targets differ in shape");
  require_matrix(scores, "macro metric scores");
  double sum = 0;
  std::size_t defined = 0;
  std::vector<int> labels(scores.cols());
  for (std::size_t t = 0; t < scores.rows(); ++t) {
    const auto trow = targets.row(t);
    for (std::size_t j = 0; j < labels.size(); ++j) labels[j] = trow[j] != 0.0;
    if (auto v = metric(scores.row(t), std::span<const int>(labels))) {
      sum += *v;
      ++defined;
    }
  }
  if (defined == 0) return std::nullopt;
  return sum / static_cast<double>(defined);
}
}  // namespace detail

/// Macro average over tags (rows of a tags x samples matrix), skipping
/// tags whose metric is undefined.
inline std::optional<double> macro_roc_auc(const Tensor& scores, const Tensor& targets) {
  return detail::macro(scores, targets, [](auto s, auto l) { return roc_auc(s, l); });
}
inline std::optional<double> macro_pr_auc(const Tensor& scores, const Tensor& targets) {
  return detail::macro(scores, targets, [](auto s, auto l) { return pr_auc(s, l); });
}

/// Argmax over the class axis (classes x samples); ties go to the lowest class.
inline double accuracy(const Tensor& logits, std::span<const int> labels) {
  require_matrix(logits, "accuracy logits");
  if (logits.cols() != labels.size()) throw ContractViolation("accuracy: label count does not match samples");
  if (labels.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t j = 0; j < logits.cols(); ++j) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.rows(); ++c)
      if (logits(c, j) > logits(best, j)) best = c;
    hits += static_cast<int>(best) == labels[j];
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

/// Mean and standard error (sample sd / sqrt(n)); the SE needs two or more runs.
struct Aggregate {
  double mean = 0;
  std::optional<double> std_error;
  std::size_t n = 0;
};

inline Aggregate aggregate(std::span<const double> values) {
  if (values.empty()) throw ContractViolation("aggregate: no runs to aggregate");
  Aggregate a;
  a.n = values.size();
  a.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(a.n);
  if (a.n >= 2) {
    double ss = 0;
    for (double v : values) ss += (v - a.mean) * (v - a.mean);
    a.std_error = std::sqrt(ss / static_cast<double>(a.n - 1)) / std::sqrt(static_cast<double>(a.n));
  }
  return a;
}

/// Averages score columns that share a group id (e.g. chunks of one
/// recording). Returns one column per group, in ascending group order.
inline Tensor group_average(const Tensor& scores, std::span<const std::int64_t> groups) {
  require_matrix(scores, "group_average scores");
  if (groups.size() != scores.cols()) throw ContractViolation("group_average: one group id per sample required");
  std::map<std::int64_t, std::vector<std::size_t>> members;
  for (std::size_t j = 0; j < groups.size(); ++j) members[groups[j]].push_back(j);
  Tensor out = Tensor::matrix(scores.rows(), members.size());
  std::size_t col = 0;
  for (const auto& [id, cols] : members) {
    for (std::size_t r = 0; r < scores.rows(); ++r) {
      double s = 0;
      for (auto c : cols) s += scores(r, c);
      out(r, col) = s / static_cast<double>(cols.size());
    }
    ++col;
  }
  return out;
}

}  // namespace maxplus
