#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "maskmlp/core/adam.hpp"
#include "maskmlp/core/checkpoint.hpp"
#include "maskmlp/core/error.hpp"
#include "maskmlp/core/mlp.hpp"
#include "maskmlp/core/rng.hpp"
#include "maskmlp/data/csv.hpp"
#include "maskmlp/data/dataset.hpp"
#include "maskmlp/data/labels.hpp"
#include "maskmlp/data/scaler.hpp"
#include "maskmlp/missing/fill.hpp"

namespace maskmlp {

enum class ModelKind { maskmlp, mlp_zeros, mlp_mean, mlp_indicator, logreg };

inline const char* to_string(ModelKind k) {
  switch (k) {
    case ModelKind::maskmlp: return "maskmlp";
    case ModelKind::mlp_zeros: return "mlp_zeros";
    case ModelKind::mlp_mean: return "mlp_mean";
    case ModelKind::mlp_indicator: return "mlp_indicator";
    case ModelKind::logreg: return "logreg";
  }
  return "?";
}

inline ModelKind model_kind_from_string(const std::string& s) {
  if (s == "maskmlp") return ModelKind::maskmlp;
  if (s == "mlp_zeros" || s == "mlp-zeros") return ModelKind::mlp_zeros;
  if (s == "mlp_mean" || s == "mlp-mean") return ModelKind::mlp_mean;
  if (s == "mlp_indicator" || s == "mlp-indicator") return ModelKind::mlp_indicator;
  if (s == "logreg") return ModelKind::logreg;
  throw ConfigError("unknown model kind '" + s + "'");
}

inline FillKind fill_kind_for(ModelKind k) {
  switch (k) {
    case ModelKind::maskmlp: return FillKind::mask_pretrain;
    case ModelKind::mlp_zeros: return FillKind::zeros;
    case ModelKind::mlp_mean: return FillKind::mean;
    case ModelKind::mlp_indicator:
    case ModelKind::logreg: return FillKind::indicator;
  }
  return FillKind::indicator;
}

struct TrainConfig {
  std::size_t epochs = 100;
  double learning_rate = 1e-3;
  std::size_t batch_size = 128;
  std::size_t patience = 10;
  double validation_fraction = 0.1;

  void validate() const {
    if (!(validation_fraction > 0.0 && validation_fraction < 0.5)) {
      throw ConfigError("validation fraction must lie in (0, 0.5)");
    }
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  }
};

/// A trained probability model together with everything needed to turn raw
/// dataset rows into its inputs.
struct Classifier {
  ModelKind kind = ModelKind::mlp_indicator;
  MlpModel model;
  FillPolicy policy;
  Scaler scaler;
  std::string schema_hash;
  std::uint64_t seed = 0;
  int fold = -1;
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  double best_validation_loss = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> validation_history;
};

/// Splits labeled positions into fine-tune train/validation parts such that
/// no school appears in both. Whole schools are moved to validation until it
/// holds at least `fraction` of the rows; with fewer than two schools the
/// validation part is empty.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> grouped_validation_split(
    const Dataset& d, const LabeledView& view, double fraction, std::uint64_t seed) {
  std::vector<std::string> schools;
  std::map<std::string, std::size_t> count;
  for (auto r : view.rows) {
    if (count[d.school_ids[r]]++ == 0) schools.push_back(d.school_ids[r]);
  }
  std::vector<std::size_t> train, val;
  if (schools.size() < 2) {
    for (std::size_t i = 0; i < view.size(); ++i) train.push_back(i);
    return {train, val};
  }
  std::sort(schools.begin(), schools.end());
  Rng rng(seed);
  rng.shuffle(schools);
  const double target = fraction * static_cast<double>(view.size());
  std::set<std::string> val_schools;
  std::size_t taken = 0;
  for (std::size_t i = 0; i + 1 < schools.size() && static_cast<double>(taken) < target; ++i) {
    val_schools.insert(schools[i]);
    taken += count[schools[i]];
  }
  for (std::size_t i = 0; i < view.size(); ++i) {
    (val_schools.count(d.school_ids[view.rows[i]]) ? val : train).push_back(i);
  }
  return {train, val};
}

namespace finetune_detail {

inline Matrix inputs_for(const Classifier& c, const FeatureMatrix& scaled, std::span<const std::size_t> rows) {
  return materialize(c.policy, scaled, rows);
}

// Minibatch Adam on mean BCE with early stopping on grouped validation loss.
// The best-validation parameters are kept.
inline void fit(Classifier& c, const Dataset& d, const LabeledView& view, const TrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (view.size() == 0) throw TrainingError("cannot train on an empty labeled view");
  const FeatureMatrix scaled = apply_scaler(c.scaler, d);
  auto [train_pos, val_pos] = grouped_validation_split(d, view, cfg.validation_fraction, derive_seed(seed, "validation"));

  std::vector<std::size_t> train_rows, val_rows;
  std::vector<double> train_y, val_y;
  for (auto p : train_pos) {
    train_rows.push_back(view.rows[p]);
    train_y.push_back(view.labels[p]);
  }
  for (auto p : val_pos) {
    val_rows.push_back(view.rows[p]);
    val_y.push_back(view.labels[p]);
  }
  if (c.policy.kind == FillKind::mean) c.policy.means = observed_means(scaled, train_rows);

  const Matrix x_train = inputs_for(c, scaled, train_rows);
  const Matrix x_val = inputs_for(c, scaled, val_rows);
  const bool has_val = !val_rows.empty();

  AdamConfig adam;
  adam.learning_rate = cfg.learning_rate;
  AdamState opt = make_adam_state(c.model, adam);
  Rng shuffle_rng(derive_seed(seed, "batches"));

  MlpModel best = c.model;
  double best_loss = has_val ? bce_loss(c.model, x_val, val_y) : std::numeric_limits<double>::infinity();
  c.best_epoch = 0;
  std::size_t since_best = 0;
  std::vector<std::size_t> order(train_rows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      const Matrix xb = take_rows(x_train, idx);
      std::vector<double> yb;
      yb.reserve(idx.size());
      for (auto i : idx) yb.push_back(train_y[i]);
      auto lg = bce_loss_and_grads(c.model, xb, yb);
      if (!std::isfinite(lg.loss)) {
        throw TrainingError("fine-tuning diverged at epoch " + std::to_string(epoch));
      }
      adam_step(c.model, lg.grads, opt);
    }
    c.epochs_run = epoch;
    const double loss = has_val ? bce_loss(c.model, x_val, val_y) : bce_loss(c.model, x_train, train_y);
    c.validation_history.push_back(loss);
    if (loss < best_loss) {
      best_loss = loss;
      best = c.model;
      c.best_epoch = epoch;
      since_best = 0;
    } else if (has_val && ++since_best >= cfg.patience) {
      break;
    }
  }
  c.model = std::move(best);
  c.best_validation_loss = best_loss;
}

}  // namespace finetune_detail

/// Attaches a fresh classification head to a (pre-trained) encoder and
/// fine-tunes encoder and head together on the labeled rows.
inline Classifier finetune(MlpModel encoder, const Dataset& d, const LabeledView& view, const Scaler& scaler,
                           const TrainConfig& cfg, std::uint64_t seed) {
  if (view.size() == 0) throw TrainingError("cannot fine-tune on an empty labeled view");
  Classifier c;
  c.kind = ModelKind::maskmlp;
  c.model = std::move(encoder);
  c.model.head.reset();
  Rng head_rng(derive_seed(seed, "head"));
  attach_head(c.model, head_rng);
  c.policy = {FillKind::mask_pretrain, {}};
  c.scaler = scaler;
  c.schema_hash = d.schema.hash();
  c.seed = seed;
  if (c.model.input_dim() != d.features.cols()) {
    throw ShapeError("encoder expects " + std::to_string(c.model.input_dim()) + " features, dataset has " +
                     std::to_string(d.features.cols()));
  }
  finetune_detail::fit(c, d, view, cfg, seed);
  return c;
}

/// Encoder the MLP baselines and MaskMLP start from, drawn from the "init"
/// stream so every kind sees the same initial weights for a given seed.
inline MlpModel initial_encoder(std::size_t input_dim, std::size_t hidden, std::size_t depth, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "init"));
  return make_mlp({input_dim, hidden, depth}, rng);
}

/// From-scratch baselines: the 3-layer MLP under a fill policy, or logistic
/// regression (a head directly on the indicator-filled inputs).
inline Classifier train_baseline(ModelKind kind, const Dataset& d, const LabeledView& view, const Scaler& scaler,
                                 const TrainConfig& cfg, std::uint64_t seed, std::size_t hidden = 64,
                                 std::size_t depth = 3) {
  if (kind == ModelKind::maskmlp) throw ConfigError("maskmlp is trained with finetune(), not as a baseline");
  if (view.size() == 0) throw TrainingError("cannot train on an empty labeled view");
  Classifier c;
  c.kind = kind;
  const std::size_t dim = d.features.cols();
  if (kind == ModelKind::logreg) {
    c.model.declared_input_dim = dim;
  } else {
    c.model = initial_encoder(dim, hidden, depth, seed);
  }
  Rng head_rng(derive_seed(seed, "head"));
  attach_head(c.model, head_rng);
  c.policy = {fill_kind_for(kind), {}};
  c.scaler = scaler;
  c.schema_hash = d.schema.hash();
  c.seed = seed;
  finetune_detail::fit(c, d, view, cfg, seed);
  return c;
}

inline void check_schema(const Classifier& c, const Dataset& d) {
  if (d.schema.hash() != c.schema_hash) {
    throw ContractError("classifier was trained on schema " + c.schema_hash + " but the rows use " + d.schema.hash());
  }
}

/// Model inputs (scaled and filled) for the given dataset rows.
inline Matrix classifier_inputs(const Classifier& c, const Dataset& d, std::span<const std::size_t> rows) {
  check_schema(c, d);
  Matrix out(rows.size(), d.features.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t r = rows[i];
    std::vector<double> scaled(d.features.cols());
    for (std::size_t col = 0; col < scaled.size(); ++col) {
      scaled[col] = d.features.is_observed(r, col) ? c.scaler.scale(col, d.features.values(r, col)) : 0.0;
    }
    materialize_row(c.policy, scaled, d.features.observed_row(r), out.row(i));
  }
  return out;
}

/// Positive-class probabilities. Each row is computed independently, so a
/// batch equals the concatenation of single-row calls.
inline std::vector<double> predict_proba(const Classifier& c, const Dataset& d, std::span<const std::size_t> rows) {
  return predict(c.model, classifier_inputs(c, d, rows));
}

/// Encoder embeddings (one row per input row).
inline Matrix export_embeddings(const Classifier& c, const Dataset& d, std::span<const std::size_t> rows) {
  return embed(c.model, classifier_inputs(c, d, rows));
}

/// Embeddings CSV: id, label, improvement, Tx and subgroup tags, then e0..e{h-1}.
inline void write_embeddings_csv(const std::filesystem::path& path, const Classifier& c, const Dataset& d,
                                 const LabeledView& view) {
  const Matrix emb = export_embeddings(c, d, view.rows);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out << "student_id,label,improvement,Tx";
  for (const auto& [tag, _] : d.subgroups) out << ',' << csv_detail::quote_if_needed(tag);
  for (std::size_t j = 0; j < emb.cols(); ++j) out << ",e" << j;
  out << '\n';
  for (std::size_t i = 0; i < view.size(); ++i) {
    const std::size_t r = view.rows[i];
    out << csv_detail::quote_if_needed(d.student_ids[r]) << ',' << view.labels[i] << ','
        << csv_detail::format_double(view.improvement[i]) << ',' << d.intervention[r];
    for (const auto& [tag, values] : d.subgroups) out << ',' << csv_detail::quote_if_needed(values[r]);
    for (std::size_t j = 0; j < emb.cols(); ++j) out << ',' << csv_detail::format_double(emb(i, j));
    out << '\n';
  }
}

inline Checkpoint classifier_checkpoint(const Classifier& c) {
  Checkpoint ck;
  ck.tag = to_string(c.kind);
  ck.schema_hash = c.schema_hash;
  store_model(ck, c.model);
  ck.metadata = {{"kind", to_string(c.kind)},
                 {"fill_policy", to_string(c.policy.kind)},
                 {"seed", c.seed},
                 {"fold", c.fold},
                 {"epochs_run", c.epochs_run},
                 {"best_epoch", c.best_epoch}};
  std::vector<double> kinds;
  for (auto k : c.scaler.kinds) kinds.push_back(k == VariableKind::binary ? 1.0 : 0.0);
  ck.arrays.push_back({"scaler.lo", {c.scaler.lo.size()}, c.scaler.lo});
  ck.arrays.push_back({"scaler.hi", {c.scaler.hi.size()}, c.scaler.hi});
  ck.arrays.push_back({"scaler.binary", {kinds.size()}, kinds});
  if (c.policy.kind == FillKind::mean) ck.arrays.push_back({"policy.means", {c.policy.means.size()}, c.policy.means});
  return ck;
}

inline Classifier classifier_from_checkpoint(const Checkpoint& ck) {
  Classifier c;
  c.kind = model_kind_from_string(ck.metadata.at("kind").get<std::string>());
  c.model = restore_model(ck);
  c.policy.kind = fill_kind_from_string(ck.metadata.at("fill_policy").get<std::string>());
  if (c.policy.kind == FillKind::mean) c.policy.means = ck.array("policy.means").data;
  c.scaler.lo = ck.array("scaler.lo").data;
  c.scaler.hi = ck.array("scaler.hi").data;
  for (double b : ck.array("scaler.binary").data) {
    c.scaler.kinds.push_back(b != 0.0 ? VariableKind::binary : VariableKind::numeric);
  }
  c.schema_hash = ck.schema_hash;
  c.seed = ck.metadata.value("seed", std::uint64_t{0});
  c.fold = ck.metadata.value("fold", -1);
  c.epochs_run = ck.metadata.value("epochs_run", std::size_t{0});
  c.best_epoch = ck.metadata.value("best_epoch", std::size_t{0});
  return c;
}

}  // namespace maskmlp
