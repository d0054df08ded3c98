#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "maskmlp/core/error.hpp"

namespace maskmlp {

/// A metric value, or nullopt where the metric is undefined (an empty
/// denominator or a single class present).
using MetricValue = std::optional<double>;

struct ConfusionMetrics {
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
  double accuracy = 0.0;
  MetricValue specificity;
  MetricValue sensitivity;
};

inline void check_inputs(std::span<const double> probs, std::span<const int> labels, const char* what) {
  if (probs.size() != labels.size()) throw ContractError(std::string(what) + ": probs and labels differ in length");
  if (probs.empty()) throw ContractError(std::string(what) + ": empty input");
  for (int y : labels)
    if (y != 0 && y != 1) throw ContractError(std::string(what) + ": labels must be 0 or 1");
}

/// Thresholded counts; a row is predicted positive when prob >= threshold.
inline ConfusionMetrics confusion_metrics(std::span<const double> probs, std::span<const int> labels,
                                          double threshold = 0.5) {
  check_inputs(probs, labels, "confusion_metrics");
  ConfusionMetrics m;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const bool pred = probs[i] >= threshold;
    if (labels[i]) {
      (pred ? m.tp : m.fn)++;
    } else {
      (pred ? m.fp : m.tn)++;
    }
  }
  m.accuracy = static_cast<double>(m.tp + m.tn) / static_cast<double>(probs.size());
  if (m.tn + m.fp) m.specificity = static_cast<double>(m.tn) / static_cast<double>(m.tn + m.fp);
  if (m.tp + m.fn) m.sensitivity = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
  return m;
}

/// Area under the ROC curve as the Mann-Whitney statistic: the fraction of
/// (positive, negative) pairs ranked correctly, ties counting one half.
inline MetricValue roc_auc(std::span<const double> probs, std::span<const int> labels) {
  check_inputs(probs, labels, "roc_auc");
  std::vector<std::size_t> idx(probs.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return probs[a] < probs[b]; });
  // Twice the pair count keeps everything in exact integers.
  double n_pos = 0.0, n_neg = 0.0, twice_u = 0.0, neg_below = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    double pos = 0.0, neg = 0.0;
    while (j < idx.size() && probs[idx[j]] == probs[idx[i]]) {
      (labels[idx[j]] ? pos : neg) += 1.0;
      ++j;
    }
    twice_u += pos * (2.0 * neg_below + neg);
    neg_below += neg;
    n_pos += pos;
    n_neg += neg;
    i = j;
  }
  if (n_pos == 0.0 || n_neg == 0.0) return std::nullopt;
  return (twice_u / 2.0) / (n_pos * n_neg);
}

/// Area under the precision-recall curve by step integration (average
/// precision): sum over score thresholds of (recall gain) x precision.
inline MetricValue pr_auc(std::span<const double> probs, std::span<const int> labels) {
  check_inputs(probs, labels, "pr_auc");
  std::vector<std::size_t> idx(probs.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  double total_pos = 0.0;
  for (int y : labels) total_pos += y;
  if (total_pos == 0.0 || total_pos == static_cast<double>(labels.size())) return std::nullopt;
  double tp = 0.0, seen = 0.0, prev_recall = 0.0, ap = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && probs[idx[j]] == probs[idx[i]]) {
      tp += labels[idx[j]];
      seen += 1.0;
      ++j;
    }
    const double recall = tp / total_pos;
    ap += (recall - prev_recall) * (tp / seen);
    prev_recall = recall;
    i = j;
  }
  return ap;
}

}  // namespace maskmlp
