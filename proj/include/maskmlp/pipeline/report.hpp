#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "maskmlp/core/error.hpp"
#include "maskmlp/data/csv.hpp"
#include "maskmlp/eval/evaluate.hpp"
#include "maskmlp/pipeline/pipeline.hpp"

namespace maskmlp {

inline nlohmann::json to_json(const TTestRecord& t) {
  nlohmann::json j = {{"model_a", t.model_a}, {"model_b", t.model_b}, {"metric", t.metric}};
  if (t.result) {
    j["t"] = t.result->t;
    j["p_two_tailed"] = t.result->p;
    j["df"] = t.result->df;
    j["mean_difference"] = t.result->mean_difference;
  } else {
    j["t"] = nullptr;
    j["p_two_tailed"] = nullptr;
    j["note"] = t.note;
  }
  return j;
}

inline nlohmann::json to_json(const QuantileBucket& q) {
  return {{"bucket", q.index},
          {"lower", q.lower},
          {"upper", q.upper},
          {"count", q.count},
          {"accuracy", metric_json(q.accuracy)}};
}

inline nlohmann::json to_json(const SubgroupRow& s) {
  return {{"value", s.value}, {"count", s.count}, {"low_support", s.low_support}, {"metrics", to_json(s.metrics)}};
}

/// Machine-readable benchmark report. Contains no timestamps or paths so
/// that equal inputs give equal bytes.
inline nlohmann::json to_json(const BenchmarkResult& r) {
  nlohmann::json j;
  j["config"] = to_json(r.config);
  if (r.config.data.synth) j["config"]["data"]["synth"] = to_json(effective_synth_config(r.config));
  j["dataset"] = {{"rows", r.dataset_rows},
                  {"labeled_rows", r.view.size()},
                  {"task", r.view.task},
                  {"control_mean_improvement", r.view.threshold},
                  {"missing_rate", r.missing_rate}};
  nlohmann::json folds = nlohmann::json::array();
  for (std::size_t f = 0; f < r.plan.k; ++f) {
    folds.push_back({{"fold", f}, {"test_rows", r.plan.test[f].size()}, {"test_groups", r.plan.test_groups[f]}});
  }
  j["folds"] = {{"k", r.plan.k}, {"mode", to_string(r.plan.mode)}, {"test", folds}};
  j["models"] = nlohmann::json::array();
  for (const auto& run : r.runs) {
    nlohmann::json m = to_json(run.report);
    nlohmann::json training = nlohmann::json::array();
    for (const auto& c : run.classifiers) {
      nlohmann::json t = {{"fold", c.fold},
                          {"epochs_run", c.epochs_run},
                          {"best_epoch", c.best_epoch},
                          {"best_validation_loss", c.best_validation_loss}};
      training.push_back(t);
    }
    for (std::size_t f = 0; f < run.pretrained.size(); ++f) {
      training[f]["pretrain_epoch_loss"] = run.pretrained[f].epoch_loss;
    }
    m["training"] = training;
    m["quantiles"] = nlohmann::json::array();
    for (const auto& q : run.quantiles) m["quantiles"].push_back(to_json(q));
    m["subgroups"] = nlohmann::json::object();
    for (const auto& [tag, rows] : run.subgroups) {
      m["subgroups"][tag] = nlohmann::json::array();
      for (const auto& s : rows) m["subgroups"][tag].push_back(to_json(s));
    }
    j["models"].push_back(m);
  }
  j["ttests"] = nlohmann::json::array();
  for (const auto& t : r.ttests) j["ttests"].push_back(to_json(t));
  return j;
}

namespace report_detail {

inline std::string fmt(const MetricValue& v, int digits = 4) {
  if (!v) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, *v);
  return buf;
}

inline std::string fmt(double v, int digits = 4) { return fmt(MetricValue(v), digits); }

}  // namespace report_detail

inline std::string to_markdown(const BenchmarkResult& r) {
  using report_detail::fmt;
  std::ostringstream md;
  md << "# Benchmark: " << r.view.task << ", " << to_string(r.plan.mode) << " split, k=" << r.plan.k << "\n\n";
  md << "Rows: " << r.dataset_rows << " (" << r.view.size() << " labeled). Missing rate of assessment cells: "
     << fmt(r.missing_rate) << ". Control-mean improvement threshold: " << fmt(r.view.threshold) << ".\n\n";

  for (const bool tx : {false, true}) {
    md << "## " << (tx ? "Intervention subset (Tx = 1)" : "All test students") << "\n\n";
    md << "| Model | Accuracy | ROC-AUC | PR-AUC | Specificity | Sensitivity |\n";
    md << "|---|---|---|---|---|---|\n";
    for (const auto& run : r.runs) {
      const auto& m = tx ? run.report.mean_intervention : run.report.mean_all;
      md << "| " << run.report.model << " | " << fmt(m.accuracy) << " | " << fmt(m.roc_auc) << " | " << fmt(m.pr_auc)
         << " | " << fmt(m.specificity) << " | " << fmt(m.sensitivity) << " |\n";
    }
    md << "\n";
  }

  if (!r.ttests.empty()) {
    md << "## Paired t-tests over folds\n\n| A | B | Metric | t | p (two-tailed) |\n|---|---|---|---|---|\n";
    for (const auto& t : r.ttests) {
      md << "| " << t.model_a << " | " << t.model_b << " | " << t.metric << " | ";
      if (t.result) {
        md << fmt(t.result->t, 3) << " | " << fmt(t.result->p) << " |\n";
      } else {
        md << "n/a | " << t.note << " |\n";
      }
    }
    md << "\n";
  }

  for (const auto& run : r.runs) {
    if (!run.quantiles.empty()) {
      md << "## Accuracy by improvement quantile: " << run.report.model << "\n\n";
      md << "| Bucket | Improvement range | Rows | Accuracy |\n|---|---|---|---|\n";
      for (const auto& q : run.quantiles) {
        md << "| " << q.index + 1 << " | " << fmt(q.lower, 2) << " to " << fmt(q.upper, 2) << " | " << q.count
           << " | " << fmt(q.accuracy) << " |\n";
      }
      md << "\n";
    }
    if (!run.subgroups.empty()) {
      md << "## Subgroups: " << run.report.model << "\n\n";
      md << "| Tag | Value | Rows | Accuracy | Specificity | Sensitivity | ROC-AUC |\n|---|---|---|---|---|---|---|\n";
      for (const auto& [tag, rows] : run.subgroups) {
        for (const auto& s : rows) {
          md << "| " << tag << " | " << s.value << (s.low_support ? " (low support)" : "") << " | " << s.count
             << " | " << fmt(s.metrics.accuracy) << " | " << fmt(s.metrics.specificity) << " | "
             << fmt(s.metrics.sensitivity) << " | " << fmt(s.metrics.roc_auc) << " |\n";
        }
      }
      md << "\n";
    }
  }
  return md.str();
}

/// Quantile table of every model, one row per (model, bucket).
inline std::string quantiles_csv(const BenchmarkResult& r) {
  std::ostringstream out;
  out << "model,bucket,lower,upper,count,accuracy\n";
  for (const auto& run : r.runs) {
    for (const auto& q : run.quantiles) {
      out << run.report.model << ',' << q.index << ',' << csv_detail::format_double(q.lower) << ','
          << csv_detail::format_double(q.upper) << ',' << q.count << ','
          << (q.accuracy ? csv_detail::format_double(*q.accuracy) : "") << '\n';
    }
  }
  return out.str();
}

inline nlohmann::json to_json(const std::vector<AblationRow>& rows) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) {
    j.push_back({{"losses", r.losses},
                 {"split", to_string(r.split)},
                 {"all", to_json(r.all)},
                 {"intervention", to_json(r.intervention)}});
  }
  return j;
}

inline std::string to_markdown(const std::vector<AblationRow>& rows) {
  using report_detail::fmt;
  std::ostringstream md;
  md << "# Pre-training loss ablation\n\n| Losses | Split | Accuracy | ROC-AUC | PR-AUC |\n|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    md << "| " << r.losses << " | " << to_string(r.split) << " | " << fmt(r.all.accuracy) << " | "
       << fmt(r.all.roc_auc) << " | " << fmt(r.all.pr_auc) << " |\n";
  }
  return md.str();
}

inline std::string importance_csv(const ImportanceResult& r) {
  std::ostringstream out;
  out << "feature,accuracy,delta\n";
  for (const auto& row : r.rows) {
    out << row.feature << ',' << (row.accuracy ? csv_detail::format_double(*row.accuracy) : "") << ','
        << (row.delta ? csv_detail::format_double(*row.delta) : "") << '\n';
  }
  return out.str();
}

inline std::string to_markdown(const ImportanceResult& r) {
  using report_detail::fmt;
  std::ostringstream md;
  md << "# Drop-one-feature importance\n\nBaseline accuracy: " << fmt(r.baseline_accuracy) << " over "
     << r.labeled_rows << " labeled rows.\n\n| Feature | Accuracy without | Delta |\n|---|---|---|\n";
  for (const auto& row : r.rows) {
    md << "| " << row.feature << " | " << fmt(row.accuracy) << " | " << fmt(row.delta) << " |\n";
  }
  return md.str();
}

/// Writes `content` to a temporary sibling and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out << content;
    if (!out) throw Error("write to '" + tmp.string() + "' failed");
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace maskmlp
