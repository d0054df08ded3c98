#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "maskmlp/core/error.hpp"
#include "maskmlp/core/mlp.hpp"

namespace maskmlp {

struct PairLoss {
  double loss = 0.0;
  std::vector<double> grad_a;
  std::vector<double> grad_b;
};

struct TripletGrad {
  double loss = 0.0;
  std::vector<double> grad_anchor;
  std::vector<double> grad_positive;
  std::vector<double> grad_negative;
};

namespace loss_detail {

inline void require_same_length(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size()) {
    throw ShapeError(std::string(what) + ": lengths " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace loss_detail

inline constexpr double kNormEpsilon = 1e-12;

/// 1 - cos(a, b). Both vectors need a norm above 1e-12.
inline PairLoss cosine_embedding_loss(std::span<const double> a, std::span<const double> b) {
  loss_detail::require_same_length(a, b, "cosine_embedding_loss");
  const double na = std::sqrt(loss_detail::dot(a, a));
  const double nb = std::sqrt(loss_detail::dot(b, b));
  if (na < kNormEpsilon || nb < kNormEpsilon) {
    throw NumericError("cosine_embedding_loss: zero-norm embedding");
  }
  const double ab = loss_detail::dot(a, b);
  const double cos = ab / (na * nb);
  PairLoss out;
  out.loss = 1.0 - cos;
  out.grad_a.resize(a.size());
  out.grad_b.resize(b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    out.grad_a[i] = -(b[i] / (na * nb) - cos * a[i] / (na * na));
    out.grad_b[i] = -(a[i] / (na * nb) - cos * b[i] / (nb * nb));
  }
  return out;
}

/// Mean squared difference over the embedding components.
inline PairLoss mse_embedding_loss(std::span<const double> a, std::span<const double> b) {
  loss_detail::require_same_length(a, b, "mse_embedding_loss");
  PairLoss out;
  out.grad_a.resize(a.size());
  out.grad_b.resize(b.size());
  if (a.empty()) return out;
  const double h = static_cast<double>(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    out.loss += d * d / h;
    out.grad_a[i] = 2.0 * d / h;
    out.grad_b[i] = -2.0 * d / h;
  }
  return out;
}

/// Pair-based contrastive loss d(a,p)^2 + max(0, margin - d(a,n))^2.
inline TripletGrad contrastive_loss(std::span<const double> anchor, std::span<const double> positive,
                                    std::span<const double> negative, double margin) {
  loss_detail::require_same_length(anchor, positive, "contrastive_loss");
  loss_detail::require_same_length(anchor, negative, "contrastive_loss");
  const std::size_t h = anchor.size();
  TripletGrad out;
  out.grad_anchor.assign(h, 0.0);
  out.grad_positive.assign(h, 0.0);
  out.grad_negative.assign(h, 0.0);
  for (std::size_t i = 0; i < h; ++i) {
    const double d = anchor[i] - positive[i];
    out.loss += d * d;
    out.grad_anchor[i] += 2.0 * d;
    out.grad_positive[i] -= 2.0 * d;
  }
  const double dn = loss_detail::distance(anchor, negative);
  const double gap = margin - dn;
  if (gap > 0.0) {
    out.loss += gap * gap;
    // d/da (margin - dn)^2 = -2 gap (a - n) / dn; zero subgradient at dn = 0.
    if (dn > kNormEpsilon) {
      for (std::size_t i = 0; i < h; ++i) {
        const double g = -2.0 * gap * (anchor[i] - negative[i]) / dn;
        out.grad_anchor[i] += g;
        out.grad_negative[i] -= g;
      }
    }
  }
  return out;
}

/// max(0, d(a,p) - d(a,n) + margin).
inline TripletGrad triplet_loss(std::span<const double> anchor, std::span<const double> positive,
                                std::span<const double> negative, double margin) {
  loss_detail::require_same_length(anchor, positive, "triplet_loss");
  loss_detail::require_same_length(anchor, negative, "triplet_loss");
  const std::size_t h = anchor.size();
  TripletGrad out;
  out.grad_anchor.assign(h, 0.0);
  out.grad_positive.assign(h, 0.0);
  out.grad_negative.assign(h, 0.0);
  const double dp = loss_detail::distance(anchor, positive);
  const double dn = loss_detail::distance(anchor, negative);
  const double v = dp - dn + margin;
  if (v <= 0.0) return out;
  out.loss = v;
  for (std::size_t i = 0; i < h; ++i) {
    if (dp > kNormEpsilon) {
      const double g = (anchor[i] - positive[i]) / dp;
      out.grad_anchor[i] += g;
      out.grad_positive[i] -= g;
    }
    if (dn > kNormEpsilon) {
      const double g = (anchor[i] - negative[i]) / dn;
      out.grad_anchor[i] -= g;
      out.grad_negative[i] += g;
    }
  }
  return out;
}

struct VimeLoss {
  double loss = 0.0;
  double mask_bce = 0.0;
  double reconstruction_mse = 0.0;
  std::vector<double> grad_reconstruction;
  std::vector<double> grad_mask_logits;
};

/// Mask-vector estimation (BCE of mask logits against the augmentation mask,
/// averaged over positions) plus feature-vector estimation (MSE of the
/// reconstruction against the original, averaged over positions observed
/// before augmentation), summed with equal weights.
inline VimeLoss vime_pretext_loss(std::span<const double> original, std::span<const std::uint8_t> original_observed,
                                  std::span<const std::uint8_t> augmented, std::span<const double> reconstruction,
                                  std::span<const double> mask_logits) {
  const std::size_t d = original.size();
  if (original_observed.size() != d || augmented.size() != d || reconstruction.size() != d || mask_logits.size() != d) {
    throw ShapeError("vime_pretext_loss: input lengths differ");
  }
  VimeLoss out;
  out.grad_reconstruction.assign(d, 0.0);
  out.grad_mask_logits.assign(d, 0.0);
  if (d == 0) return out;
  const double n = static_cast<double>(d);
  for (std::size_t i = 0; i < d; ++i) {
    const double z = mask_logits[i];
    const double y = augmented[i] ? 1.0 : 0.0;
    out.mask_bce += (std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))) - y * z) / n;
    out.grad_mask_logits[i] = (sigmoid(z) - y) / n;
  }
  std::size_t n_obs = 0;
  for (auto o : original_observed) n_obs += o ? 1 : 0;
  if (n_obs > 0) {
    const double m = static_cast<double>(n_obs);
    for (std::size_t i = 0; i < d; ++i) {
      if (!original_observed[i]) continue;
      const double diff = reconstruction[i] - original[i];
      out.reconstruction_mse += diff * diff / m;
      out.grad_reconstruction[i] = 2.0 * diff / m;
    }
  }
  out.loss = out.mask_bce + out.reconstruction_mse;
  return out;
}

}  // namespace maskmlp
