#pragma once

#include <algorithm>
#include <limits>
#include <span>
#include <vector>

#include "maskmlp/core/error.hpp"
#include "maskmlp/data/dataset.hpp"

namespace maskmlp {

/// Per-feature min-max scaling to [0, 1], fitted on training rows only.
/// Keeping every observed value non-negative leaves -1 free as the missing
/// sentinel.
struct Scaler {
  std::vector<double> lo;
  std::vector<double> hi;
  std::vector<VariableKind> kinds;

  double scale(std::size_t col, double v) const {
    if (kinds[col] == VariableKind::binary) return std::clamp(v, 0.0, 1.0);
    const double span = hi[col] - lo[col];
    if (!(span > 0.0)) return 0.5;
    return std::clamp((v - lo[col]) / span, 0.0, 1.0);
  }

  bool operator==(const Scaler&) const = default;
};

inline Scaler fit_scaler(const Dataset& d, std::span<const std::size_t> train_rows) {
  if (train_rows.empty()) throw ContractError("fit_scaler: empty training row set");
  const auto feats = d.schema.features();
  Scaler s;
  s.lo.assign(feats.size(), std::numeric_limits<double>::infinity());
  s.hi.assign(feats.size(), -std::numeric_limits<double>::infinity());
  for (const auto& f : feats) s.kinds.push_back(f.kind);
  for (auto r : train_rows) {
    for (std::size_t c = 0; c < feats.size(); ++c) {
      if (!d.features.is_observed(r, c)) continue;
      const double v = d.features.values(r, c);
      s.lo[c] = std::min(s.lo[c], v);
      s.hi[c] = std::max(s.hi[c], v);
    }
  }
  // Never-observed features collapse to a constant (scaled to 0.5).
  for (std::size_t c = 0; c < feats.size(); ++c) {
    if (s.lo[c] > s.hi[c]) s.lo[c] = s.hi[c] = 0.0;
  }
  return s;
}

/// Scaled copy of every row; the observed mask is carried over unchanged and
/// missing cells stay 0.
inline FeatureMatrix apply_scaler(const Scaler& s, const Dataset& d) {
  if (s.lo.size() != d.features.cols()) {
    throw ShapeError("scaler fitted on " + std::to_string(s.lo.size()) + " features, dataset has " +
                     std::to_string(d.features.cols()));
  }
  FeatureMatrix out = d.features;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c)
      out.values(r, c) = out.is_observed(r, c) ? s.scale(c, d.features.values(r, c)) : 0.0;
  return out;
}

}  // namespace maskmlp
