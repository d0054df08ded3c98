#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "maskmlp/core/error.hpp"
#include "maskmlp/data/labels.hpp"
#include "maskmlp/data/synth.hpp"
#include "maskmlp/eval/folds.hpp"
#include "maskmlp/finetune/classifier.hpp"
#include "maskmlp/missing/fill.hpp"
#include "maskmlp/pretrain/pretrain.hpp"

namespace maskmlp {

/// Where the rows come from: a CSV with an optional schema file (the ECRI
/// schema when absent), or the synthetic generator.
struct DataSource {
  std::string csv;
  std::string schema;
  std::optional<SynthConfig> synth;
  bool synth_seed_given = false;  // otherwise derived from the master seed
};

struct RunConfig {
  DataSource data;
  std::string task = "word_identification";
  SplitMode split = SplitMode::school;
  std::size_t k = 5;
  std::vector<ModelKind> models{ModelKind::maskmlp, ModelKind::mlp_zeros, ModelKind::mlp_mean,
                                ModelKind::mlp_indicator, ModelKind::logreg};
  MaskSpec mask;
  PretextConfig pretext;
  TrainConfig train;
  std::size_t hidden = 64;
  std::size_t depth = 3;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::vector<std::string> features;  // feature-importance subset; empty = all
  std::size_t quantiles = 5;
  std::size_t min_support = 20;

  std::uint64_t master_seed() const {
    if (!seed) throw ConfigError("a master seed is required (--seed or \"seed\" in the config)");
    return *seed;
  }

  void validate() const {
    master_seed();
    if (data.synth) {
      if (!data.csv.empty()) throw ConfigError("data: give either a csv path or a synth block, not both");
      data.synth->validate();
    } else {
      if (data.csv.empty()) throw ConfigError("data: a csv path or a synth block is required");
      if (!std::filesystem::exists(data.csv)) throw ConfigError("data file '" + data.csv + "' does not exist");
      if (!data.schema.empty() && !std::filesystem::exists(data.schema)) {
        throw ConfigError("schema file '" + data.schema + "' does not exist");
      }
    }
    if (k < 2) throw ConfigError("k must be at least 2");
    if (models.empty()) throw ConfigError("at least one model kind is required");
    std::set<ModelKind> seen;
    for (auto m : models)
      if (!seen.insert(m).second) throw ConfigError(std::string("model '") + to_string(m) + "' listed twice");
    if (hidden == 0 || depth == 0) throw ConfigError("hidden size and depth must be positive");
    if (quantiles < 2) throw ConfigError("quantiles must be at least 2");
    mask.validate();
    pretext.validate();
    train.validate();
  }
};

namespace config_detail {

inline void check_keys(const nlohmann::json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& into, const std::string& where) {
  if (!j.contains(key)) return;
  if constexpr (std::is_unsigned_v<T>) {
    // json would wrap a negative integer silently
    if (!j.at(key).is_number_unsigned()) throw ConfigError(where + "." + key + " must be a non-negative integer");
  }
  try {
    into = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

inline std::string resolve(const std::string& path, const std::filesystem::path& base) {
  if (path.empty() || base.empty()) return path;
  const std::filesystem::path p(path);
  return p.is_absolute() ? path : (base / p).lexically_normal().string();
}

}  // namespace config_detail

inline SynthConfig synth_config_from_json(const nlohmann::json& j, bool* seed_given = nullptr) {
  using namespace config_detail;
  check_keys(j, "data.synth",
             {"students", "schools", "teachers_per_school", "latent_dim", "missing_rate", "mechanism",
              "intervention_effect", "seed"});
  SynthConfig s;
  read(j, "students", s.n_students, "data.synth");
  read(j, "schools", s.n_schools, "data.synth");
  read(j, "teachers_per_school", s.teachers_per_school, "data.synth");
  read(j, "latent_dim", s.latent_dim, "data.synth");
  read(j, "missing_rate", s.missing_rate, "data.synth");
  read(j, "intervention_effect", s.intervention_effect, "data.synth");
  read(j, "seed", s.seed, "data.synth");
  if (seed_given) *seed_given = j.contains("seed");
  if (j.contains("mechanism")) s.mechanism = mechanism_from_string(j.at("mechanism").get<std::string>());
  return s;
}

inline nlohmann::json to_json(const SynthConfig& s) {
  return {{"students", s.n_students},
          {"schools", s.n_schools},
          {"teachers_per_school", s.teachers_per_school},
          {"latent_dim", s.latent_dim},
          {"missing_rate", s.missing_rate},
          {"mechanism", to_string(s.mechanism)},
          {"intervention_effect", s.intervention_effect},
          {"seed", s.seed}};
}

/// Parses a run configuration. Relative data paths are taken relative to
/// `base_dir`. Unknown keys are rejected.
inline RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  using namespace config_detail;
  check_keys(j, "config",
             {"data", "task", "split", "k", "models", "mask", "pretext", "train", "model", "seed", "out", "features",
              "quantiles", "min_support"});
  RunConfig c;
  try {
    if (j.contains("data")) {
      const auto& d = j.at("data");
      check_keys(d, "data", {"csv", "schema", "synth"});
      read(d, "csv", c.data.csv, "data");
      read(d, "schema", c.data.schema, "data");
      c.data.csv = resolve(c.data.csv, base_dir);
      c.data.schema = resolve(c.data.schema, base_dir);
      if (d.contains("synth")) c.data.synth = synth_config_from_json(d.at("synth"), &c.data.synth_seed_given);
    }
    read(j, "task", c.task, "config");
    if (j.contains("split")) c.split = split_mode_from_string(j.at("split").get<std::string>());
    read(j, "k", c.k, "config");
    if (j.contains("models")) {
      c.models.clear();
      for (const auto& m : j.at("models")) c.models.push_back(model_kind_from_string(m.get<std::string>()));
    }
    if (j.contains("mask")) {
      const auto& m = j.at("mask");
      check_keys(m, "mask", {"rate", "corruption"});
      read(m, "rate", c.mask.mask_rate, "mask");
      if (m.contains("corruption")) c.mask.corruption = corruption_from_string(m.at("corruption").get<std::string>());
    }
    if (j.contains("pretext")) {
      const auto& p = j.at("pretext");
      check_keys(p, "pretext", {"losses", "margin", "epochs", "batch_size", "learning_rate"});
      if (p.contains("losses")) {
        c.pretext.losses.clear();
        for (const auto& l : p.at("losses")) c.pretext.losses.push_back(pretext_loss_from_string(l.get<std::string>()));
      }
      read(p, "margin", c.pretext.margin, "pretext");
      read(p, "epochs", c.pretext.epochs, "pretext");
      read(p, "batch_size", c.pretext.batch_size, "pretext");
      read(p, "learning_rate", c.pretext.adam.learning_rate, "pretext");
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      check_keys(t, "train", {"epochs", "learning_rate", "batch_size", "patience", "validation_fraction"});
      read(t, "epochs", c.train.epochs, "train");
      read(t, "learning_rate", c.train.learning_rate, "train");
      read(t, "batch_size", c.train.batch_size, "train");
      read(t, "patience", c.train.patience, "train");
      read(t, "validation_fraction", c.train.validation_fraction, "train");
    }
    if (j.contains("model")) {
      const auto& m = j.at("model");
      check_keys(m, "model", {"hidden", "depth"});
      read(m, "hidden", c.hidden, "model");
      read(m, "depth", c.depth, "model");
    }
    if (j.contains("seed")) {
      std::uint64_t s = 0;
      read(j, "seed", s, "config");
      c.seed = s;
    }
    read(j, "out", c.out, "config");
    read(j, "features", c.features, "config");
    read(j, "quantiles", c.quantiles, "config");
    read(j, "min_support", c.min_support, "config");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return run_config_from_json(j, path.parent_path());
}

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  nlohmann::json data = nlohmann::json::object();
  if (c.data.synth) {
    data["synth"] = to_json(*c.data.synth);
  } else {
    data["csv"] = c.data.csv;
    data["schema"] = c.data.schema;
  }
  j["data"] = data;
  j["task"] = canonical_task_name(c.task);
  j["split"] = to_string(c.split);
  j["k"] = c.k;
  j["models"] = nlohmann::json::array();
  for (auto m : c.models) j["models"].push_back(to_string(m));
  j["mask"] = {{"rate", c.mask.mask_rate}, {"corruption", to_string(c.mask.corruption)}};
  nlohmann::json losses = nlohmann::json::array();
  for (auto l : c.pretext.losses) losses.push_back(to_string(l));
  j["pretext"] = {{"losses", losses},
                  {"margin", c.pretext.margin},
                  {"epochs", c.pretext.epochs},
                  {"batch_size", c.pretext.batch_size},
                  {"learning_rate", c.pretext.adam.learning_rate}};
  j["train"] = {{"epochs", c.train.epochs},
                {"learning_rate", c.train.learning_rate},
                {"batch_size", c.train.batch_size},
                {"patience", c.train.patience},
                {"validation_fraction", c.train.validation_fraction}};
  j["model"] = {{"hidden", c.hidden}, {"depth", c.depth}};
  if (c.seed) j["seed"] = *c.seed;
  j["features"] = c.features;
  j["quantiles"] = c.quantiles;
  j["min_support"] = c.min_support;
  return j;
}

}  // namespace maskmlp
