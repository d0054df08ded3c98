#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "maskmlp/core/error.hpp"
#include "maskmlp/core/mlp.hpp"

namespace maskmlp {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moment accumulators, one flat array per parameter in
/// parameter_views() order.
struct AdamState {
  AdamConfig config;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::uint64_t step = 0;
};

inline AdamState make_adam_state(const MlpModel& model, AdamConfig cfg = {}) {
  AdamState s;
  s.config = cfg;
  const ModelGrads shapes = zero_grads_like(model);
  for (const auto& g : grad_views(shapes)) {
    s.first_moment.emplace_back(g.size(), 0.0);
    s.second_moment.emplace_back(g.size(), 0.0);
  }
  return s;
}

/// One bias-corrected Adam update, in place. Gradients are validated in full
/// before any parameter changes, so a rejected step leaves the model intact.
inline void adam_step(MlpModel& model, const ModelGrads& grads, AdamState& state) {
  auto params = parameter_views(model);
  const auto g = grad_views(grads);
  if (g.size() != params.size() || state.first_moment.size() != params.size()) {
    throw ShapeError("adam_step: parameter/gradient/state structures differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (g[i].size() != params[i].values.size() ||
        state.first_moment[i].size() != params[i].values.size()) {
      throw ShapeError("adam_step: shape mismatch for " + params[i].name);
    }
    if (!all_finite(g[i])) {
      throw TrainingError("non-finite gradient for parameter " + params[i].name);
    }
  }
  const auto& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    auto w = params[i].values;
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[i][j];
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= c.learning_rate * mhat / (std::sqrt(vhat) + c.epsilon);
    }
  }
  ++model.generation;
}

}  // namespace maskmlp
