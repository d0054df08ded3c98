#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "maskmlp/core/error.hpp"
#include "maskmlp/core/rng.hpp"
#include "maskmlp/data/csv.hpp"
#include "maskmlp/data/dataset.hpp"
#include "maskmlp/data/labels.hpp"
#include "maskmlp/data/scaler.hpp"
#include "maskmlp/data/schema.hpp"
#include "maskmlp/data/synth.hpp"
#include "maskmlp/eval/evaluate.hpp"
#include "maskmlp/eval/folds.hpp"
#include "maskmlp/eval/stats.hpp"
#include "maskmlp/finetune/classifier.hpp"
#include "maskmlp/pipeline/config.hpp"
#include "maskmlp/pretrain/pretrain.hpp"

namespace maskmlp {

/// Synthetic config actually used for a run: the seed comes from the master
/// seed's "data" stream unless the config pins it.
inline SynthConfig effective_synth_config(const RunConfig& cfg) {
  SynthConfig s = *cfg.data.synth;
  if (!cfg.data.synth_seed_given) s.seed = derive_seed(cfg.master_seed(), "data");
  return s;
}

inline Dataset load_dataset(const RunConfig& cfg) {
  if (cfg.data.synth) return generate_synthetic(effective_synth_config(cfg));
  const DatasetSchema schema = cfg.data.schema.empty() ? ecri_schema() : load_schema(cfg.data.schema);
  return load_csv(cfg.data.csv, schema);
}

inline const std::vector<std::string>& split_groups(const Dataset& d, SplitMode mode) {
  return mode == SplitMode::school ? d.school_ids : d.student_ids;
}

/// Dataset rows (labeled or not) whose group is absent from a fold's test
/// set: the rows the scaler and pre-training may see for that fold.
inline std::vector<std::size_t> non_test_rows(const Dataset& d, const FoldPlan& plan, std::size_t fold) {
  const auto& groups = split_groups(d, plan.mode);
  const std::set<std::string> test(plan.test_groups.at(fold).begin(), plan.test_groups.at(fold).end());
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < d.rows(); ++r)
    if (!test.count(groups[r])) out.push_back(r);
  return out;
}

inline FoldPlan plan_folds(const Dataset& d, const LabeledView& view, const RunConfig& cfg) {
  const auto& groups = split_groups(d, cfg.split);
  std::vector<std::string> ids;
  ids.reserve(view.size());
  for (auto r : view.rows) ids.push_back(groups[r]);
  return make_folds(ids, cfg.k, cfg.split, derive_seed(cfg.master_seed(), "folds"));
}

inline std::uint64_t fold_seed(const RunConfig& cfg, std::size_t fold) {
  return derive_seed(cfg.master_seed(), "fold", fold);
}

/// Label-blind pre-training of a fresh encoder on the given rows.
inline PretrainResult pretrain_rows(const Dataset& d, const Scaler& scaler, std::span<const std::size_t> rows,
                                    const RunConfig& cfg, std::uint64_t seed) {
  const FeatureMatrix scaled = apply_scaler(scaler, d);
  MlpModel encoder = initial_encoder(d.features.cols(), cfg.hidden, cfg.depth, seed);
  return pretrain(std::move(encoder), scaled, rows, cfg.pretext, cfg.mask, derive_seed(seed, "pretrain"));
}

struct ModelRun {
  ModelKind kind = ModelKind::maskmlp;
  std::vector<Classifier> classifiers;          // one per fold
  std::vector<PretrainResult> pretrained;       // maskmlp only, one per fold
  EvalReport report;
  std::vector<QuantileBucket> quantiles;
  std::map<std::string, std::vector<SubgroupRow>> subgroups;
};

struct TTestRecord {
  std::string model_a;
  std::string model_b;
  std::string metric;
  std::optional<TTestResult> result;  // nullopt when the differences have zero variance
  std::string note;
};

struct BenchmarkResult {
  RunConfig config;
  std::size_t dataset_rows = 0;
  double missing_rate = 0.0;
  LabeledView view;
  FoldPlan plan;
  std::vector<ModelRun> runs;
  std::vector<TTestRecord> ttests;

  const ModelRun* find(ModelKind k) const {
    for (const auto& r : runs)
      if (r.kind == k) return &r;
    return nullptr;
  }
};

inline std::vector<TTestRecord> compare_models(const std::vector<ModelRun>& runs) {
  std::vector<TTestRecord> out;
  if (runs.size() < 2) return out;
  auto ref = std::find_if(runs.begin(), runs.end(), [](const ModelRun& r) { return r.kind == ModelKind::maskmlp; });
  if (ref == runs.end()) ref = runs.begin();
  const std::pair<const char*, MetricValue MetricSet::*> metrics[] = {{"accuracy", &MetricSet::accuracy},
                                                                      {"roc_auc", &MetricSet::roc_auc}};
  for (const auto& other : runs) {
    if (&other == &*ref) continue;
    for (const auto& [name, field] : metrics) {
      TTestRecord rec{to_string(ref->kind), to_string(other.kind), name, std::nullopt, {}};
      const auto a = ref->report.per_fold(field);
      const auto b = other.report.per_fold(field);
      const bool defined = std::all_of(a.begin(), a.end(), [](double v) { return std::isfinite(v); }) &&
                           std::all_of(b.begin(), b.end(), [](double v) { return std::isfinite(v); });
      if (!defined) {
        rec.note = "metric undefined on some fold";
      } else {
        try {
          rec.result = paired_t_test(a, b);
        } catch (const DegenerateTestError&) {
          rec.note = "fold differences have zero variance";
        }
      }
      out.push_back(std::move(rec));
    }
  }
  return out;
}

/// Observer for fold-level progress; the CLI hooks checkpoint writing here.
using FoldHook = std::function<void(const ModelRun&, std::size_t fold)>;

/// Grouped k-fold comparison of the configured model kinds on one dataset.
/// Per fold the scaler is fitted on all rows outside the test groups;
/// MaskMLP pre-trains on those same rows (complete or not) and fine-tunes
/// on the labeled training rows only.
inline BenchmarkResult run_benchmark(const RunConfig& cfg, const Dataset& d, const FoldHook& hook = {}) {
  cfg.validate();
  d.validate();
  BenchmarkResult res;
  res.config = cfg;
  res.dataset_rows = d.rows();
  res.missing_rate = compute_missing_rate(d);
  res.view = derive_labels(d, cfg.task);
  res.plan = plan_folds(d, res.view, cfg);
  spdlog::info("{} rows, {} labeled, threshold {:.4f}, {} folds ({} split)", d.rows(), res.view.size(),
               res.view.threshold, cfg.k, to_string(cfg.split));

  for (auto kind : cfg.models) {
    ModelRun run;
    run.kind = kind;
    for (std::size_t f = 0; f < cfg.k; ++f) {
      const std::uint64_t seed = fold_seed(cfg, f);
      const auto pool = non_test_rows(d, res.plan, f);
      const Scaler scaler = fit_scaler(d, pool);
      const LabeledView train_view = res.view.subset(res.plan.train(f));
      Classifier c;
      if (kind == ModelKind::maskmlp) {
        auto pre = pretrain_rows(d, scaler, pool, cfg, seed);
        spdlog::debug("fold {} pre-training: {} epochs, final loss {:.6f}", f, pre.epoch_loss.size(),
                      pre.epoch_loss.empty() ? 0.0 : pre.epoch_loss.back());
        c = finetune(pre.encoder, d, train_view, scaler, cfg.train, seed);
        run.pretrained.push_back(std::move(pre));
      } else {
        c = train_baseline(kind, d, train_view, scaler, cfg.train, seed, cfg.hidden, cfg.depth);
      }
      c.fold = static_cast<int>(f);
      spdlog::debug("{} fold {}: {} epochs, best epoch {}", to_string(kind), f, c.epochs_run, c.best_epoch);
      run.classifiers.push_back(std::move(c));
      if (hook) hook(run, f);
    }
    run.report = evaluate(run.classifiers, res.plan, res.view, d);
    const auto& pooled = run.report.pooled;
    if (pooled.rows.size() >= cfg.quantiles) {
      run.quantiles = quantile_breakdown(pooled.improvement, pooled.probs, pooled.labels, cfg.quantiles);
    }
    for (const auto& [tag, _] : d.subgroups) {
      run.subgroups[tag] = subgroup_breakdown(d, pooled.rows, pooled.probs, pooled.labels, tag, cfg.min_support);
    }
    spdlog::info("{}: accuracy {:.4f}, roc_auc {:.4f}", to_string(kind), run.report.mean_all.accuracy.value_or(NAN),
                 run.report.mean_all.roc_auc.value_or(NAN));
    res.runs.push_back(std::move(run));
  }
  res.ttests = compare_models(res.runs);
  return res;
}

inline BenchmarkResult run_benchmark(const RunConfig& cfg, const FoldHook& hook = {}) {
  cfg.validate();
  return run_benchmark(cfg, load_dataset(cfg), hook);
}

// ---------------------------------------------------------------------------
// Loss ablation

/// The eleven pre-training loss sets: each loss alone, every pair, and all
/// four together.
inline std::vector<std::vector<PretextLoss>> ablation_loss_sets() {
  const PretextLoss base[] = {PretextLoss::cosine, PretextLoss::mse, PretextLoss::contrastive, PretextLoss::triplet};
  std::vector<std::vector<PretextLoss>> sets;
  for (auto l : base) sets.push_back({l});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = i + 1; j < 4; ++j) sets.push_back({base[i], base[j]});
  sets.push_back({base[0], base[1], base[2], base[3]});
  return sets;
}

inline std::string loss_set_name(const std::vector<PretextLoss>& losses) {
  std::string s;
  for (auto l : losses) s += (s.empty() ? "" : "+") + std::string(to_string(l));
  return s;
}

struct AblationRow {
  std::string losses;
  SplitMode split = SplitMode::school;
  MetricSet all;
  MetricSet intervention;
};

/// MaskMLP under each loss set and both split modes.
inline std::vector<AblationRow> ablate_losses(const RunConfig& cfg, const Dataset& d,
                                              std::vector<std::vector<PretextLoss>> sets = ablation_loss_sets()) {
  if (sets.empty()) throw ConfigError("loss ablation needs at least one loss set");
  std::vector<AblationRow> rows;
  for (SplitMode split : {SplitMode::school, SplitMode::student}) {
    for (const auto& losses : sets) {
      RunConfig c = cfg;
      c.split = split;
      c.models = {ModelKind::maskmlp};
      c.pretext.losses = losses;
      c.validate();
      spdlog::info("ablation: {} ({} split)", loss_set_name(losses), to_string(split));
      const auto res = run_benchmark(c, d);
      const auto& rep = res.runs.front().report;
      rows.push_back({loss_set_name(losses), split, rep.mean_all, rep.mean_intervention});
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Feature importance

struct ImportanceRow {
  std::string feature;
  MetricValue accuracy;  // with the feature removed
  MetricValue delta;     // baseline accuracy - accuracy without the feature
};

struct ImportanceResult {
  MetricValue baseline_accuracy;
  std::size_t labeled_rows = 0;
  std::vector<ImportanceRow> rows;  // sorted by delta, largest first
};

/// Drop-one-feature importance for MaskMLP: every configured feature is
/// removed in turn and the full pipeline rerun with the same seeds.
inline ImportanceResult feature_importance(const RunConfig& cfg, const Dataset& d) {
  RunConfig c = cfg;
  c.models = {ModelKind::maskmlp};
  c.validate();
  std::vector<std::string> features = cfg.features.empty() ? d.schema.feature_names() : cfg.features;
  for (const auto& f : features)
    if (!d.schema.feature_index(f)) throw ConfigError("feature-importance: unknown feature '" + f + "'");

  ImportanceResult out;
  spdlog::info("feature importance: baseline run");
  const auto base = run_benchmark(c, d);
  out.baseline_accuracy = base.runs.front().report.mean_all.accuracy;
  out.labeled_rows = base.view.size();
  for (const auto& f : features) {
    spdlog::info("feature importance: without {}", f);
    ImportanceRow row{f, std::nullopt, std::nullopt};
    try {
      const auto res = run_benchmark(c, d.drop_feature(f));
      if (res.view.size() != out.labeled_rows) {
        throw IntegrityError("labeled row count changed from " + std::to_string(out.labeled_rows) + " to " +
                             std::to_string(res.view.size()));
      }
      row.accuracy = res.runs.front().report.mean_all.accuracy;
    } catch (const ValidationError& e) {
      throw ConfigError("feature-importance without '" + f + "': " + e.what());
    } catch (const Error& e) {
      throw Error("feature-importance without '" + f + "': " + e.what());
    }
    if (out.baseline_accuracy && row.accuracy) row.delta = *out.baseline_accuracy - *row.accuracy;
    out.rows.push_back(std::move(row));
  }
  std::stable_sort(out.rows.begin(), out.rows.end(), [](const ImportanceRow& a, const ImportanceRow& b) {
    return a.delta.value_or(-INFINITY) > b.delta.value_or(-INFINITY);
  });
  return out;
}

}  // namespace maskmlp
