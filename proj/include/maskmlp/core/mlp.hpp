#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "maskmlp/core/error.hpp"
#include "maskmlp/core/matrix.hpp"
#include "maskmlp/core/rng.hpp"

namespace maskmlp {

enum class Activation { relu, identity, sigmoid };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::identity: return "identity";
    case Activation::sigmoid: return "sigmoid";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "identity") return Activation::identity;
  if (s == "sigmoid") return Activation::sigmoid;
  throw ParseError("unknown activation '" + s + "'");
}

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// Dense layer computing act(x * weight + bias); weight is in_dim x out_dim.
struct Layer {
  Matrix weight;
  std::vector<double> bias;
  Activation activation = Activation::relu;

  std::size_t in_dim() const { return weight.rows(); }
  std::size_t out_dim() const { return weight.cols(); }
  bool operator==(const Layer&) const = default;
};

struct MlpConfig {
  std::size_t input_dim = 16;
  std::size_t hidden_size = 64;
  std::size_t depth = 3;
};

/// Encoder stack plus an optional single-unit classification head.
///
/// The encoder output is the embedding. An encoder with no layers passes the
/// input through unchanged, which is how logistic regression is expressed.
struct MlpModel {
  std::vector<Layer> layers;
  std::optional<Layer> head;
  std::size_t declared_input_dim = 0;
  // Bumped on every optimizer update so stale activation caches are caught.
  std::uint64_t generation = 0;

  std::size_t input_dim() const {
    return layers.empty() ? declared_input_dim : layers.front().in_dim();
  }
  std::size_t hidden_size() const {
    return layers.empty() ? declared_input_dim : layers.back().out_dim();
  }
  std::size_t depth() const { return layers.size(); }

  bool same_parameters(const MlpModel& o) const {
    return layers == o.layers && head == o.head && input_dim() == o.input_dim();
  }
};

// Uniform He-style fan-in initialization; biases start at zero.
inline Layer make_layer(std::size_t in, std::size_t out, Activation act, Rng& rng) {
  Layer layer{Matrix(in, out), std::vector<double>(out, 0.0), act};
  const double limit = std::sqrt(6.0 / static_cast<double>(in));
  for (double& w : layer.weight.values()) w = rng.uniform(-limit, limit);
  return layer;
}

inline MlpModel make_mlp(const MlpConfig& cfg, Rng& rng) {
  if (cfg.input_dim == 0) throw ConfigError("MLP input dimension must be positive");
  MlpModel m;
  m.declared_input_dim = cfg.input_dim;
  std::size_t in = cfg.input_dim;
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    m.layers.push_back(make_layer(in, cfg.hidden_size, Activation::relu, rng));
    in = cfg.hidden_size;
  }
  return m;
}

/// Attaches a sigmoid classification head with Glorot-uniform weights.
inline void attach_head(MlpModel& m, Rng& rng) {
  const std::size_t h = m.hidden_size();
  Layer head{Matrix(h, 1), {0.0}, Activation::sigmoid};
  const double limit = std::sqrt(6.0 / static_cast<double>(h + 1));
  for (double& w : head.weight.values()) w = rng.uniform(-limit, limit);
  m.head = std::move(head);
}

// Applies the activation in place.
inline void activate(Matrix& z, Activation act) {
  switch (act) {
    case Activation::identity: return;
    case Activation::relu:
      for (double& v : z.values()) v = v > 0.0 ? v : 0.0;
      return;
    case Activation::sigmoid:
      for (double& v : z.values()) v = sigmoid(v);
      return;
  }
}

inline Matrix layer_forward(const Layer& layer, const Matrix& x, bool apply_activation = true) {
  if (x.cols() != layer.in_dim()) {
    throw ShapeError("layer expects " + std::to_string(layer.in_dim()) + " input columns, got " +
                     std::to_string(x.cols()));
  }
  Matrix z = matmul(x, layer.weight);
  for (std::size_t i = 0; i < z.rows(); ++i) {
    auto r = z.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += layer.bias[j];
  }
  if (apply_activation) activate(z, layer.activation);
  return z;
}

struct LayerGrad {
  Matrix weight;
  std::vector<double> bias;
};

struct ModelGrads {
  std::vector<LayerGrad> layers;
  std::optional<LayerGrad> head;
};

inline LayerGrad zero_grad_like(const Layer& l) {
  return {Matrix(l.weight.rows(), l.weight.cols()), std::vector<double>(l.bias.size(), 0.0)};
}

inline ModelGrads zero_grads_like(const MlpModel& m) {
  ModelGrads g;
  for (const auto& l : m.layers) g.layers.push_back(zero_grad_like(l));
  if (m.head) g.head = zero_grad_like(*m.head);
  return g;
}

/// Everything backward() needs: the input and post-activation output of
/// every encoder layer, stamped with the model generation.
struct ForwardCache {
  std::uint64_t generation = 0;
  std::vector<std::size_t> layer_dims;
  std::vector<Matrix> inputs;
  std::vector<Matrix> outputs;
};

struct ForwardResult {
  Matrix embedding;
  ForwardCache cache;
};

inline void check_input(const MlpModel& model, const Matrix& batch) {
  if (batch.cols() != model.input_dim()) {
    throw ShapeError("forward: batch has " + std::to_string(batch.cols()) +
                     " columns but the model expects " + std::to_string(model.input_dim()));
  }
}

inline ForwardResult forward(const MlpModel& model, const Matrix& batch) {
  check_input(model, batch);
  ForwardResult r;
  r.cache.generation = model.generation;
  Matrix x = batch;
  for (const auto& layer : model.layers) {
    r.cache.layer_dims.push_back(layer.out_dim());
    Matrix y = layer_forward(layer, x);
    r.cache.inputs.push_back(std::move(x));
    r.cache.outputs.push_back(y);
    x = std::move(y);
  }
  r.embedding = std::move(x);
  return r;
}

/// Encoder output without keeping a cache.
inline Matrix embed(const MlpModel& model, const Matrix& batch) {
  check_input(model, batch);
  Matrix x = batch;
  for (const auto& layer : model.layers) x = layer_forward(layer, x);
  return x;
}

// Turns dL/d(output) into dL/d(pre-activation) in place.
inline void activation_backward(Matrix& grad, const Matrix& output, Activation act) {
  auto g = grad.values();
  auto y = output.values();
  switch (act) {
    case Activation::identity: return;
    case Activation::relu:
      for (std::size_t i = 0; i < g.size(); ++i)
        if (y[i] <= 0.0) g[i] = 0.0;
      return;
    case Activation::sigmoid:
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= y[i] * (1.0 - y[i]);
      return;
  }
}

// Given dL/d(pre-activation), fills the parameter gradient and returns
// dL/d(input).
inline Matrix dense_backward(const Layer& layer, const Matrix& input, const Matrix& grad_pre,
                             LayerGrad& out, bool need_input_grad = true) {
  out.weight = matmul_tn(input, grad_pre);
  out.bias.assign(layer.out_dim(), 0.0);
  for (std::size_t i = 0; i < grad_pre.rows(); ++i) {
    const auto r = grad_pre.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) out.bias[j] += r[j];
  }
  if (!need_input_grad) return {};
  return matmul_nt(grad_pre, layer.weight);
}

/// Backpropagates dL/d(embedding) through the encoder. The returned gradients
/// have no head entry.
inline ModelGrads backward(const MlpModel& model, const ForwardCache& cache,
                           const Matrix& grad_embedding, Matrix* grad_input = nullptr) {
  if (cache.generation != model.generation || cache.inputs.size() != model.layers.size()) {
    throw ContractError("backward: activation cache does not belong to this model state");
  }
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    if (cache.layer_dims[i] != model.layers[i].out_dim()) {
      throw ContractError("backward: activation cache layer " + std::to_string(i) +
                          " has mismatched width");
    }
  }
  const std::size_t n = cache.inputs.empty() ? grad_embedding.rows() : cache.inputs.front().rows();
  if (grad_embedding.rows() != n || grad_embedding.cols() != model.hidden_size()) {
    throw ShapeError("backward: embedding gradient is " + shape_string(grad_embedding) +
                     ", expected " + std::to_string(n) + "x" + std::to_string(model.hidden_size()));
  }
  ModelGrads grads;
  grads.layers.resize(model.layers.size());
  Matrix g = grad_embedding;
  for (std::size_t i = model.layers.size(); i-- > 0;) {
    const Layer& layer = model.layers[i];
    activation_backward(g, cache.outputs[i], layer.activation);
    const bool need = i > 0 || grad_input != nullptr;
    g = dense_backward(layer, cache.inputs[i], g, grads.layers[i], need);
  }
  if (grad_input) *grad_input = std::move(g);
  return grads;
}

/// Raw head outputs (before the sigmoid), one per row.
inline std::vector<double> head_logits(const MlpModel& model, const Matrix& embedding) {
  if (!model.head) throw StateError("model has no classification head");
  Matrix z = layer_forward(*model.head, embedding, false);
  return {z.values().begin(), z.values().end()};
}

inline std::vector<double> predict(const MlpModel& model, const Matrix& batch) {
  auto logits = head_logits(model, embed(model, batch));
  for (double& v : logits) v = sigmoid(v);
  return logits;
}

struct LossAndGrads {
  double loss = 0.0;
  ModelGrads grads;
};

/// Mean binary cross-entropy of the head's sigmoid output, computed from
/// logits for stability, with gradients for head and encoder.
inline LossAndGrads bce_loss_and_grads(const MlpModel& model, const Matrix& batch,
                                       std::span<const double> labels) {
  if (!model.head) throw StateError("model has no classification head");
  if (labels.size() != batch.rows()) {
    throw ShapeError("bce: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(batch.rows()) + " rows");
  }
  auto fr = forward(model, batch);
  const Matrix logits = layer_forward(*model.head, fr.embedding, false);
  const double n = static_cast<double>(batch.rows());
  LossAndGrads out;
  Matrix grad_logit(batch.rows(), 1);
  for (std::size_t i = 0; i < batch.rows(); ++i) {
    const double z = logits(i, 0);
    const double y = labels[i];
    // log(1 + e^z) - y z, written to avoid overflow.
    out.loss += (std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))) - y * z) / n;
    grad_logit(i, 0) = (sigmoid(z) - y) / n;
  }
  LayerGrad head_grad;
  Matrix grad_emb = dense_backward(*model.head, fr.embedding, grad_logit, head_grad);
  out.grads = backward(model, fr.cache, grad_emb);
  out.grads.head = std::move(head_grad);
  return out;
}

inline double bce_loss(const MlpModel& model, const Matrix& batch, std::span<const double> labels) {
  const auto logits = head_logits(model, embed(model, batch));
  double loss = 0.0;
  const double n = static_cast<double>(batch.rows());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = logits[i];
    loss += (std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))) - labels[i] * z) / n;
  }
  return loss;
}

// Named flat views over every parameter, in a fixed order shared by
// parameter_views() and grad_views().
struct ParamView {
  std::string name;
  std::span<double> values;
};

inline std::vector<ParamView> parameter_views(MlpModel& m) {
  std::vector<ParamView> v;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    v.push_back({"encoder." + std::to_string(i) + ".weight", m.layers[i].weight.values()});
    v.push_back({"encoder." + std::to_string(i) + ".bias", m.layers[i].bias});
  }
  if (m.head) {
    v.push_back({"head.weight", m.head->weight.values()});
    v.push_back({"head.bias", m.head->bias});
  }
  return v;
}

inline std::vector<std::span<double>> grad_views(ModelGrads& g) {
  std::vector<std::span<double>> v;
  for (auto& l : g.layers) {
    v.push_back(l.weight.values());
    v.push_back(l.bias);
  }
  if (g.head) {
    v.push_back(g.head->weight.values());
    v.push_back(g.head->bias);
  }
  return v;
}

inline std::vector<std::span<const double>> grad_views(const ModelGrads& g) {
  std::vector<std::span<const double>> v;
  for (const auto& l : g.layers) {
    v.push_back(l.weight.values());
    v.push_back(l.bias);
  }
  if (g.head) {
    v.push_back(g.head->weight.values());
    v.push_back(g.head->bias);
  }
  return v;
}

inline void add_into(ModelGrads& acc, const ModelGrads& g) {
  auto a = grad_views(acc);
  auto b = grad_views(g);
  if (a.size() != b.size()) throw ShapeError("gradient structures differ");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != b[i].size()) throw ShapeError("gradient shapes differ");
    for (std::size_t j = 0; j < a[i].size(); ++j) a[i][j] += b[i][j];
  }
}

inline std::size_t parameter_count(const MlpModel& m) {
  std::size_t n = 0;
  for (const auto& l : m.layers) n += l.weight.size() + l.bias.size();
  if (m.head) n += m.head->weight.size() + m.head->bias.size();
  return n;
}

}  // namespace maskmlp
