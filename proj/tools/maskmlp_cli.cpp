// maskmlp command-line driver: synthetic data, benchmarks, ablations,
// feature importance and embedding export.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "maskmlp/core/checkpoint.hpp"
#include "maskmlp/data/csv.hpp"
#include "maskmlp/data/synth.hpp"
#include "maskmlp/pipeline/config.hpp"
#include "maskmlp/pipeline/pipeline.hpp"
#include "maskmlp/pipeline/report.hpp"

namespace fs = std::filesystem;
using namespace maskmlp;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitValidation = 2;

void setup_logging() {
  auto logger = spdlog::stderr_logger_st("maskmlp");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  const char* env = std::getenv("MASKMLP_LOG");
  const std::string level = env ? env : "info";
  if (level == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    spdlog::set_level(spdlog::level::info);
  }
}

// Flags shared by every command that runs the pipeline. Unset flags leave
// the config file (or default) value alone.
struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out, task, split, models, csv, schema, losses, corruption, features;
  std::optional<std::size_t> k, epochs, pretrain_epochs, students, schools, hidden;
  std::optional<double> missing_rate, mask_rate;
  std::optional<std::string> mechanism;
  bool synth = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config, "JSON run configuration")->check(CLI::ExistingFile);
    cmd->add_option("--seed", seed, "master seed");
    cmd->add_option("--out", out, "output directory");
    cmd->add_option("--task", task, "word-id or word-attack");
    cmd->add_option("--split", split, "school or student");
    cmd->add_option("--models", models, "comma-separated model kinds");
    cmd->add_option("--k", k, "number of folds");
    cmd->add_option("--data", csv, "input CSV");
    cmd->add_option("--schema", schema, "schema JSON for the input CSV");
    cmd->add_flag("--synth", synth, "use the synthetic generator as data source");
    cmd->add_option("--students", students, "synthetic: number of students");
    cmd->add_option("--schools", schools, "synthetic: number of schools");
    cmd->add_option("--missing-rate", missing_rate, "synthetic: target missing rate");
    cmd->add_option("--mechanism", mechanism, "synthetic: mcar or mar");
    cmd->add_option("--epochs", epochs, "fine-tuning epochs");
    cmd->add_option("--pretrain-epochs", pretrain_epochs, "pre-training epochs");
    cmd->add_option("--losses", losses, "comma-separated pre-training losses");
    cmd->add_option("--mask-rate", mask_rate, "fraction of observed features masked");
    cmd->add_option("--corruption", corruption, "sentinel or marginal_sample");
    cmd->add_option("--hidden", hidden, "hidden layer width");
    cmd->add_option("--features", features, "feature-importance: comma-separated subset");
  }

  static std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s + ",") {
      if (ch == ',') {
        if (!cur.empty()) out.push_back(cur);
        cur.clear();
      } else if (ch != ' ') {
        cur += ch;
      }
    }
    return out;
  }

  RunConfig build() const {
    RunConfig c = config.empty() ? RunConfig{} : load_run_config(config);
    if (seed) c.seed = seed;
    if (out) c.out = *out;
    if (task) c.task = *task;
    if (split) c.split = split_mode_from_string(*split);
    if (k) c.k = *k;
    if (models) {
      c.models.clear();
      for (const auto& m : split_list(*models)) c.models.push_back(model_kind_from_string(m));
    }
    if (csv) {
      c.data.csv = *csv;
      c.data.synth.reset();
    }
    if (schema) c.data.schema = *schema;
    const bool synth_flags = students || schools || missing_rate || mechanism;
    if ((synth || synth_flags) && !c.data.synth) {
      if (csv) throw ConfigError("--data cannot be combined with synthetic-data flags");
      c.data.csv.clear();
      c.data.synth = SynthConfig{};
    }
    if (c.data.synth) {
      if (students) c.data.synth->n_students = *students;
      if (schools) c.data.synth->n_schools = *schools;
      if (missing_rate) c.data.synth->missing_rate = *missing_rate;
      if (mechanism) c.data.synth->mechanism = mechanism_from_string(*mechanism);
    }
    if (epochs) c.train.epochs = *epochs;
    if (pretrain_epochs) c.pretext.epochs = *pretrain_epochs;
    if (losses) {
      c.pretext.losses.clear();
      for (const auto& l : split_list(*losses)) c.pretext.losses.push_back(pretext_loss_from_string(l));
    }
    if (mask_rate) c.mask.mask_rate = *mask_rate;
    if (corruption) c.mask.corruption = corruption_from_string(*corruption);
    if (hidden) c.hidden = *hidden;
    if (features) c.features = split_list(*features);
    c.validate();
    return c;
  }
};

fs::path prepare_out_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw ConfigError("cannot create output directory '" + dir + "'");
  const fs::path probe = fs::path(dir) / ".write_probe";
  {
    std::ofstream test(probe);
    if (!test) throw ConfigError("output directory '" + dir + "' is not writable");
  }
  fs::remove(probe, ec);
  return dir;
}

std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

int cmd_synth(const CommonFlags& flags, std::optional<double> effect) {
  RunConfig c = flags.config.empty() ? RunConfig{} : load_run_config(flags.config);
  if (!c.data.synth) c.data.synth = SynthConfig{};
  SynthConfig s = *c.data.synth;
  if (!flags.seed && !c.seed && !c.data.synth_seed_given) throw ConfigError("synth needs --seed");
  if (flags.seed) {
    s.seed = *flags.seed;
  } else if (!c.data.synth_seed_given) {
    s.seed = *c.seed;
  }
  if (flags.students) s.n_students = *flags.students;
  if (flags.schools) s.n_schools = *flags.schools;
  if (flags.missing_rate) s.missing_rate = *flags.missing_rate;
  if (flags.mechanism) s.mechanism = mechanism_from_string(*flags.mechanism);
  if (effect) s.intervention_effect = *effect;
  s.validate();
  const fs::path out = prepare_out_dir(flags.out.value_or(c.out));
  const Dataset d = generate_synthetic(s);
  write_csv(d, out / "data.csv");
  write_file_atomic(out / "schema.json", dump(to_json(d.schema)));
  write_file_atomic(out / "manifest.json", dump(synth_manifest(s, d)));
  spdlog::info("wrote {} rows to {}", d.rows(), (out / "data.csv").string());
  return 0;
}

void save_fold_checkpoints(const fs::path& dir, const ModelRun& run, std::size_t fold) {
  const std::string stem = std::string(to_string(run.kind)) + "_fold" + std::to_string(fold);
  save_checkpoint(dir / (stem + ".ckpt"), classifier_checkpoint(run.classifiers.at(fold)));
  if (fold < run.pretrained.size()) {
    Checkpoint ck;
    ck.tag = "pretrained";
    ck.schema_hash = run.classifiers.at(fold).schema_hash;
    store_model(ck, run.pretrained[fold].encoder);
    ck.metadata = {{"fold", fold}, {"epoch_loss", run.pretrained[fold].epoch_loss}};
    save_checkpoint(dir / (stem + "_pretrained.ckpt"), ck);
  }
}

int cmd_benchmark(const CommonFlags& flags) {
  const RunConfig c = flags.build();
  const fs::path out = prepare_out_dir(c.out);
  const fs::path ckpt_dir = out / "checkpoints";
  fs::create_directories(ckpt_dir);
  fs::remove(out / "FAILED");
  const auto res = run_benchmark(c, [&](const ModelRun& run, std::size_t fold) {
    save_fold_checkpoints(ckpt_dir, run, fold);
  });
  write_file_atomic(out / "report.json", dump(to_json(res)));
  write_file_atomic(out / "report.md", to_markdown(res));
  write_file_atomic(out / "quantiles.csv", quantiles_csv(res));
  spdlog::info("report written to {}", (out / "report.json").string());
  return 0;
}

int cmd_ablate(const CommonFlags& flags) {
  const RunConfig c = flags.build();
  const fs::path out = prepare_out_dir(c.out);
  fs::remove(out / "FAILED");
  const Dataset d = load_dataset(c);
  const auto rows = ablate_losses(c, d);
  write_file_atomic(out / "ablation.json", dump(to_json(rows)));
  write_file_atomic(out / "ablation.md", to_markdown(rows));
  return 0;
}

int cmd_importance(const CommonFlags& flags) {
  const RunConfig c = flags.build();
  const fs::path out = prepare_out_dir(c.out);
  fs::remove(out / "FAILED");
  const Dataset d = load_dataset(c);
  const auto res = feature_importance(c, d);
  write_file_atomic(out / "importance.csv", importance_csv(res));
  write_file_atomic(out / "importance.md", to_markdown(res));
  return 0;
}

int cmd_export(const CommonFlags& flags, const std::string& checkpoint) {
  const RunConfig c = flags.build();
  const fs::path out = prepare_out_dir(c.out);
  const Classifier clf = classifier_from_checkpoint(load_checkpoint(checkpoint));
  if (clf.model.depth() == 0) throw ConfigError("checkpoint '" + checkpoint + "' has no MLP encoder to export");
  const Dataset d = load_dataset(c);
  const LabeledView view = derive_labels(d, c.task);
  write_embeddings_csv(out / "embeddings.csv", clf, d, view);
  spdlog::info("exported {} embeddings", view.size());
  return 0;
}

// Runs a command, mapping failures to exit codes and leaving a FAILED marker
// in the output directory for pipeline commands.
template <typename F>
int guarded(F&& body, const std::optional<fs::path>& marker_dir) {
  auto mark = [&](const std::string& msg) {
    if (!marker_dir || !fs::is_directory(*marker_dir)) return;
    std::ofstream(*marker_dir / "FAILED") << msg << "\n";
  };
  try {
    return body();
  } catch (const ValidationError& e) {
    spdlog::error("{}", e.what());
    mark(e.what());
    return kExitValidation;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    mark(e.what());
    return kExitRuntime;
  }
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Masked self-supervised pre-training for tabular data with missing values"};
  app.require_subcommand(1);

  CommonFlags synth_flags, bench_flags, ablate_flags, imp_flags, export_flags;
  std::optional<double> effect;
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--config", synth_flags.config, "JSON run configuration")->check(CLI::ExistingFile);
  synth->add_option("--seed", synth_flags.seed, "generator seed");
  synth->add_option("--out", synth_flags.out, "output directory");
  synth->add_option("--students", synth_flags.students, "number of students");
  synth->add_option("--schools", synth_flags.schools, "number of schools");
  synth->add_option("--missing-rate", synth_flags.missing_rate, "target missing rate of assessment cells");
  synth->add_option("--mechanism", synth_flags.mechanism, "mcar or mar");
  synth->add_option("--intervention-effect", effect, "strength of the treated-group effect");

  auto* bench = app.add_subcommand("benchmark", "grouped cross-validated model comparison");
  bench_flags.attach(bench);
  auto* ablate = app.add_subcommand("ablate-losses", "compare pre-training loss sets");
  ablate_flags.attach(ablate);
  auto* imp = app.add_subcommand("feature-importance", "drop-one-feature importance");
  imp_flags.attach(imp);
  auto* exp = app.add_subcommand("export-embeddings", "write encoder embeddings of labeled rows");
  export_flags.attach(exp);
  std::string checkpoint;
  exp->add_option("--checkpoint", checkpoint, "classifier checkpoint")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  auto out_dir = [](const CommonFlags& f) -> std::optional<fs::path> {
    if (f.out) return fs::path(*f.out);
    if (!f.config.empty()) {
      try {
        return fs::path(load_run_config(f.config).out);
      } catch (const std::exception&) {
      }
    }
    return fs::path("out");
  };

  if (*synth) return guarded([&] { return cmd_synth(synth_flags, effect); }, std::nullopt);
  if (*bench) return guarded([&] { return cmd_benchmark(bench_flags); }, out_dir(bench_flags));
  if (*ablate) return guarded([&] { return cmd_ablate(ablate_flags); }, out_dir(ablate_flags));
  if (*imp) return guarded([&] { return cmd_importance(imp_flags); }, out_dir(imp_flags));
  if (*exp) return guarded([&] { return cmd_export(export_flags, checkpoint); }, std::nullopt);
  return kExitValidation;
}
