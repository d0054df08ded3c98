#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "maskmlp/core/mlp.hpp"

namespace maskmlp {

/// A scalar objective over model parameters with its analytic gradient.
struct Objective {
  std::function<double(const MlpModel&)> value;
  std::function<ModelGrads(const MlpModel&)> gradient;
};

// Gradients below 1e-6 are under finite-difference resolution and compare
// absolutely.
inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

/// Max relative error between analytic gradients and central finite
/// differences over every parameter of the model. Uses the five-point
/// stencil, whose O(h^4) truncation error stays small next to the gradient
/// near a loss minimum where the three-point rule does not.
inline double grad_check(const Objective& objective, MlpModel model, double step = 3e-5) {
  const ModelGrads analytic = objective.gradient(model);
  const auto g = grad_views(analytic);
  auto params = parameter_views(model);
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].values;
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double orig = w[j];
      auto at = [&](double dx) {
        w[j] = orig + dx;
        const double v = objective.value(model);
        w[j] = orig;
        return v;
      };
      const double numeric = (8.0 * (at(step) - at(-step)) - (at(2.0 * step) - at(-2.0 * step))) / (12.0 * step);
      worst = std::max(worst, relative_error(g[i][j], numeric));
    }
  }
  return worst;
}

/// Central-difference gradient of f at x.
inline std::vector<double> numeric_gradient(const std::function<double(std::span<const double>)>& f,
                                            std::vector<double> x, double step = 1e-6) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + step;
    const double up = f(x);
    x[i] = orig - step;
    const double down = f(x);
    x[i] = orig;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

}  // namespace maskmlp
