#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "maskmlp/core/error.hpp"
#include "maskmlp/core/matrix.hpp"
#include "maskmlp/core/rng.hpp"
#include "maskmlp/data/dataset.hpp"

namespace maskmlp {

/// Value written into missing cells by the indicator and mask-pretraining
/// policies. Scaled observations lie in [0, 1], so it can never collide.
inline constexpr double kMissingSentinel = -1.0;

enum class FillKind { zeros, mean, indicator, mask_pretrain };

inline const char* to_string(FillKind k) {
  switch (k) {
    case FillKind::zeros: return "zeros";
    case FillKind::mean: return "mean";
    case FillKind::indicator: return "indicator";
    case FillKind::mask_pretrain: return "mask_pretrain";
  }
  return "?";
}

inline FillKind fill_kind_from_string(const std::string& s) {
  if (s == "zeros") return FillKind::zeros;
  if (s == "mean") return FillKind::mean;
  if (s == "indicator") return FillKind::indicator;
  if (s == "mask_pretrain") return FillKind::mask_pretrain;
  throw ConfigError("unknown fill policy '" + s + "'");
}

struct FillPolicy {
  FillKind kind = FillKind::indicator;
  std::vector<double> means;  // per feature, kind == mean only

  bool operator==(const FillPolicy&) const = default;
};

/// Per-feature means over observed cells of the given (scaled) rows. A
/// feature never observed there gets 0.
inline std::vector<double> observed_means(const FeatureMatrix& scaled, std::span<const std::size_t> rows) {
  std::vector<double> sum(scaled.cols(), 0.0);
  std::vector<std::size_t> cnt(scaled.cols(), 0);
  for (auto r : rows) {
    for (std::size_t c = 0; c < scaled.cols(); ++c) {
      if (!scaled.is_observed(r, c)) continue;
      sum[c] += scaled.values(r, c);
      ++cnt[c];
    }
  }
  for (std::size_t c = 0; c < sum.size(); ++c) sum[c] = cnt[c] ? sum[c] / static_cast<double>(cnt[c]) : 0.0;
  return sum;
}

inline FillPolicy make_fill_policy(FillKind kind, const FeatureMatrix& scaled, std::span<const std::size_t> train_rows) {
  FillPolicy p{kind, {}};
  if (kind == FillKind::mean) p.means = observed_means(scaled, train_rows);
  return p;
}

inline double fill_value(const FillPolicy& policy, std::size_t col) {
  switch (policy.kind) {
    case FillKind::zeros: return 0.0;
    case FillKind::mean:
      if (policy.means.empty()) throw StateError("mean fill policy used before its means were fitted");
      return policy.means.at(col);
    case FillKind::indicator:
    case FillKind::mask_pretrain: return kMissingSentinel;
  }
  return 0.0;
}

/// Model input for one row: observed cells pass through, missing cells get
/// the policy's fill value.
inline void materialize_row(const FillPolicy& policy, std::span<const double> row,
                            std::span<const std::uint8_t> observed, std::span<double> out) {
  if (row.size() != observed.size() || out.size() != row.size()) {
    throw ShapeError("materialize: row, mask and output lengths differ");
  }
  if (policy.kind == FillKind::mean && policy.means.size() != row.size()) {
    throw StateError("mean fill policy has " + std::to_string(policy.means.size()) + " means for " +
                     std::to_string(row.size()) + " features");
  }
  for (std::size_t c = 0; c < row.size(); ++c) out[c] = observed[c] ? row[c] : fill_value(policy, c);
}

inline std::vector<double> materialize_row(const FillPolicy& policy, std::span<const double> row,
                                           std::span<const std::uint8_t> observed) {
  std::vector<double> out(row.size());
  materialize_row(policy, row, observed, out);
  return out;
}

inline Matrix materialize(const FillPolicy& policy, const FeatureMatrix& scaled, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), scaled.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    materialize_row(policy, scaled.values.row(rows[i]), scaled.observed_row(rows[i]), out.row(i));
  }
  return out;
}

enum class Corruption { sentinel, marginal_sample };

inline const char* to_string(Corruption c) { return c == Corruption::sentinel ? "sentinel" : "marginal_sample"; }

inline Corruption corruption_from_string(const std::string& s) {
  if (s == "sentinel") return Corruption::sentinel;
  if (s == "marginal_sample" || s == "marginal-sample") return Corruption::marginal_sample;
  throw ConfigError("unknown corruption '" + s + "'");
}

struct MaskSpec {
  double mask_rate = 0.25;
  Corruption corruption = Corruption::sentinel;

  void validate() const {
    if (!(mask_rate >= 0.0 && mask_rate < 1.0)) {
      throw ConfigError("mask rate must lie in [0, 1), got " + std::to_string(mask_rate));
    }
  }
};

/// Observed training values per feature, used by marginal-sample corruption.
struct Marginals {
  std::vector<std::vector<double>> values;

  static Marginals fit(const FeatureMatrix& scaled, std::span<const std::size_t> rows) {
    Marginals m;
    m.values.resize(scaled.cols());
    for (auto r : rows)
      for (std::size_t c = 0; c < scaled.cols(); ++c)
        if (scaled.is_observed(r, c)) m.values[c].push_back(scaled.values(r, c));
    return m;
  }
};

/// Number of observed positions masked: floor(rate * observed), at least one
/// when anything is observed and the rate is positive.
inline std::size_t mask_count(std::size_t observed, double rate) {
  if (observed == 0 || rate <= 0.0) return 0;
  const auto k = static_cast<std::size_t>(std::floor(rate * static_cast<double>(observed)));
  return std::clamp<std::size_t>(k, 1, observed);
}

struct MaskedRow {
  std::vector<double> values;
  std::vector<std::uint8_t> augmented;  // 1 where this call masked an observed cell
};

/// Masks a uniformly chosen subset of the observed positions of an already
/// materialized row. Originally missing positions are never touched.
inline MaskedRow mask_augment(std::span<const double> vec, std::span<const std::uint8_t> observed,
                              const MaskSpec& spec, Rng& rng, const Marginals* marginals = nullptr) {
  if (vec.size() != observed.size()) throw ShapeError("mask_augment: vector and mask lengths differ");
  MaskedRow out{{vec.begin(), vec.end()}, std::vector<std::uint8_t>(vec.size(), 0)};
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < observed.size(); ++i)
    if (observed[i]) candidates.push_back(i);
  const std::size_t k = mask_count(candidates.size(), spec.mask_rate);
  // Partial Fisher-Yates: the first k slots become a uniform k-subset.
  for (std::size_t i = 0; i < k; ++i) {
    std::swap(candidates[i], candidates[i + rng.below(candidates.size() - i)]);
    const std::size_t pos = candidates[i];
    out.augmented[pos] = 1;
    if (spec.corruption == Corruption::marginal_sample) {
      if (!marginals || pos >= marginals->values.size()) {
        throw StateError("marginal-sample corruption requires fitted marginals");
      }
      const auto& pool = marginals->values[pos];
      out.values[pos] = pool.empty() ? kMissingSentinel : pool[rng.below(pool.size())];
    } else {
      out.values[pos] = kMissingSentinel;
    }
  }
  return out;
}

}  // namespace maskmlp
