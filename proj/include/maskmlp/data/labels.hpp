#pragma once

#include <span>
#include <string>
#include <vector>

#include "maskmlp/core/error.hpp"
#include "maskmlp/data/dataset.hpp"

namespace maskmlp {

/// Rows eligible for supervised training on one task, with binary labels.
struct LabeledView {
  std::string task;
  std::vector<std::size_t> rows;  // indices into the Dataset
  std::vector<int> labels;
  std::vector<double> improvement;
  double threshold = 0.0;  // mean control-group improvement

  std::size_t size() const { return rows.size(); }

  /// Sub-view over the given positions (indices into this view).
  LabeledView subset(std::span<const std::size_t> positions) const {
    LabeledView v;
    v.task = task;
    v.threshold = threshold;
    for (auto p : positions) {
      v.rows.push_back(rows.at(p));
      v.labels.push_back(labels.at(p));
      v.improvement.push_back(improvement.at(p));
    }
    return v;
  }

  std::vector<double> label_values() const { return {labels.begin(), labels.end()}; }
};

/// Accepts "word_identification"/"word-id" and "word_attack"/"word-attack".
inline std::string canonical_task_name(const std::string& s) {
  if (s == "word-id" || s == "word_id" || s == "word-identification") return "word_identification";
  if (s == "word-attack" || s == "word_attack") return "word_attack";
  return s;
}

/// Labels rows whose improvement (post - pre) strictly exceeds the mean
/// improvement of the control rows (Tx = 0). Rows lacking either score are
/// left out of the view.
inline LabeledView derive_labels(const Dataset& d, const std::string& task_name) {
  const auto& task = d.schema.task(canonical_task_name(task_name));
  const auto& pre = d.label_source(task.pre);
  const auto& post = d.label_source(task.post);
  LabeledView v;
  v.task = task.name;
  double control_sum = 0.0;
  std::size_t control_n = 0;
  for (std::size_t r = 0; r < d.rows(); ++r) {
    if (!pre.observed[r] || !post.observed[r]) continue;
    const double imp = post.values[r] - pre.values[r];
    v.rows.push_back(r);
    v.improvement.push_back(imp);
    if (d.intervention[r] == 0) {
      control_sum += imp;
      ++control_n;
    }
  }
  if (control_n == 0) {
    throw Error("derive_labels: no control rows with both " + task.pre + " and " + task.post + " observed");
  }
  v.threshold = control_sum / static_cast<double>(control_n);
  v.labels.reserve(v.rows.size());
  for (double imp : v.improvement) v.labels.push_back(imp > v.threshold ? 1 : 0);
  return v;
}

}  // namespace maskmlp
