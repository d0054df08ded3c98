#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "maskmlp/core/error.hpp"
#include "maskmlp/core/matrix.hpp"
#include "maskmlp/data/schema.hpp"

namespace maskmlp {

/// Feature values with an explicit per-cell observed flag. Missing cells hold
/// 0.0 in `values` so the matrix stays finite; only `observed` is meaningful.
struct FeatureMatrix {
  Matrix values;
  std::vector<std::uint8_t> observed;

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t rows, std::size_t cols) : values(rows, cols), observed(rows * cols, 1) {}

  std::size_t rows() const { return values.rows(); }
  std::size_t cols() const { return values.cols(); }
  bool is_observed(std::size_t r, std::size_t c) const { return observed[r * cols() + c] != 0; }
  void set_missing(std::size_t r, std::size_t c) {
    observed[r * cols() + c] = 0;
    values(r, c) = 0.0;
  }
  std::span<const std::uint8_t> observed_row(std::size_t r) const { return {observed.data() + r * cols(), cols()}; }

  bool operator==(const FeatureMatrix&) const = default;
};

struct LabelSource {
  std::vector<double> values;
  std::vector<std::uint8_t> observed;
  bool operator==(const LabelSource&) const = default;
};

/// A loaded or generated dataset. All per-row vectors share one row count.
struct Dataset {
  DatasetSchema schema;
  FeatureMatrix features;  // raw, unscaled
  std::vector<std::string> student_ids;
  std::vector<std::string> school_ids;
  std::vector<std::string> teacher_ids;
  std::vector<int> intervention;                            // Tx per row, 0 or 1
  std::map<std::string, LabelSource> label_sources;         // keyed by column name
  std::map<std::string, std::vector<std::string>> subgroups;  // keyed by tag column

  std::size_t rows() const { return student_ids.size(); }

  const LabelSource& label_source(const std::string& column) const {
    auto it = label_sources.find(column);
    if (it == label_sources.end()) throw SchemaError("dataset has no label source '" + column + "'");
    return it->second;
  }

  void validate() const {
    const std::size_t n = rows();
    auto check = [&](std::size_t got, const std::string& what) {
      if (got != n) {
        throw IntegrityError(what + " has " + std::to_string(got) + " rows, expected " + std::to_string(n));
      }
    };
    check(features.rows(), "feature matrix");
    check(school_ids.size(), "school ids");
    check(teacher_ids.size(), "teacher ids");
    check(intervention.size(), "intervention flags");
    if (features.cols() != schema.feature_count()) {
      throw IntegrityError("feature matrix has " + std::to_string(features.cols()) + " columns, schema declares " +
                           std::to_string(schema.feature_count()));
    }
    if (features.observed.size() != features.values.size()) throw IntegrityError("observed mask size mismatch");
    for (int t : intervention)
      if (t != 0 && t != 1) throw IntegrityError("intervention flag must be 0 or 1");
    for (const auto& [name, src] : label_sources) {
      check(src.values.size(), "label source " + name);
      check(src.observed.size(), "label source mask " + name);
    }
    for (const auto& [name, tag] : subgroups) check(tag.size(), "subgroup tag " + name);
  }

  /// Copy with one feature column removed from the model inputs. Label
  /// sources, the intervention flag and subgroup tags are kept.
  Dataset drop_feature(const std::string& name) const {
    const auto idx = schema.feature_index(name);
    if (!idx) throw SchemaError("cannot drop unknown feature '" + name + "'");
    Dataset d = *this;
    d.schema = schema.without_feature(name);
    const std::size_t cols = features.cols() - 1;
    d.features = FeatureMatrix(rows(), cols);
    for (std::size_t r = 0; r < rows(); ++r) {
      for (std::size_t c = 0, k = 0; c < features.cols(); ++c) {
        if (c == *idx) continue;
        d.features.values(r, k) = features.values(r, c);
        d.features.observed[r * cols + k] = features.observed[r * features.cols() + c];
        ++k;
      }
    }
    return d;
  }

  /// Copy with every label-source column blanked (pre columns that are also
  /// features keep their feature cells).
  Dataset without_labels() const {
    Dataset d = *this;
    for (auto& [name, src] : d.label_sources) {
      std::fill(src.values.begin(), src.values.end(), 0.0);
      std::fill(src.observed.begin(), src.observed.end(), 0);
    }
    return d;
  }
};

/// Fraction of unobserved cells among the assessment features (all features
/// when the schema marks none as assessments).
inline double compute_missing_rate(const Dataset& d) {
  const auto feats = d.schema.features();
  std::vector<std::size_t> cols;
  for (std::size_t i = 0; i < feats.size(); ++i)
    if (feats[i].assessment) cols.push_back(i);
  if (cols.empty())
    for (std::size_t i = 0; i < feats.size(); ++i) cols.push_back(i);
  std::size_t missing = 0;
  for (std::size_t r = 0; r < d.features.rows(); ++r)
    for (auto c : cols) missing += d.features.is_observed(r, c) ? 0 : 1;
  const std::size_t total = d.features.rows() * cols.size();
  return total == 0 ? 0.0 : static_cast<double>(missing) / static_cast<double>(total);
}

}  // namespace maskmlp
