#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "maskmlp/core/error.hpp"
#include "maskmlp/data/dataset.hpp"
#include "maskmlp/data/labels.hpp"
#include "maskmlp/eval/folds.hpp"
#include "maskmlp/eval/metrics.hpp"
#include "maskmlp/finetune/classifier.hpp"

namespace maskmlp {

/// Every reported metric for one population of rows.
struct MetricSet {
  std::size_t n = 0;
  MetricValue accuracy;
  MetricValue specificity;
  MetricValue sensitivity;
  MetricValue roc_auc;
  MetricValue pr_auc;
};

inline MetricSet compute_metrics(std::span<const double> probs, std::span<const int> labels, double threshold = 0.5) {
  MetricSet m;
  m.n = probs.size();
  if (probs.empty()) return m;
  const auto cm = confusion_metrics(probs, labels, threshold);
  m.accuracy = cm.accuracy;
  m.specificity = cm.specificity;
  m.sensitivity = cm.sensitivity;
  m.roc_auc = roc_auc(probs, labels);
  m.pr_auc = pr_auc(probs, labels);
  return m;
}

/// Unweighted mean over the sets where each metric is defined.
inline MetricSet mean_metrics(std::span<const MetricSet> sets) {
  MetricSet out;
  auto avg = [&](MetricValue MetricSet::*field) -> MetricValue {
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& s : sets) {
      if (const auto& v = s.*field) {
        sum += *v;
        ++count;
      }
    }
    if (count == 0) return std::nullopt;
    return sum / static_cast<double>(count);
  };
  for (const auto& s : sets) out.n += s.n;
  out.accuracy = avg(&MetricSet::accuracy);
  out.specificity = avg(&MetricSet::specificity);
  out.sensitivity = avg(&MetricSet::sensitivity);
  out.roc_auc = avg(&MetricSet::roc_auc);
  out.pr_auc = avg(&MetricSet::pr_auc);
  return out;
}

struct FoldResult {
  std::size_t fold = 0;
  MetricSet all;
  MetricSet intervention;  // Tx = 1 rows of the test fold
};

/// Held-out predictions of every fold, concatenated in fold order.
struct PooledPredictions {
  std::vector<std::size_t> rows;  // dataset rows
  std::vector<std::size_t> fold;
  std::vector<double> probs;
  std::vector<int> labels;
  std::vector<double> improvement;
};

struct EvalReport {
  std::string model;
  std::vector<FoldResult> folds;
  MetricSet mean_all;
  MetricSet mean_intervention;
  PooledPredictions pooled;

  std::vector<double> per_fold(MetricValue MetricSet::*field, bool intervention = false) const {
    std::vector<double> out;
    for (const auto& f : folds) {
      const auto& v = (intervention ? f.intervention : f.all).*field;
      out.push_back(v.value_or(std::numeric_limits<double>::quiet_NaN()));
    }
    return out;
  }
};

/// Predictions for test rows of one fold, by a model trained without them.
using FoldPredictor = std::function<std::vector<double>(std::size_t fold, std::span<const std::size_t> dataset_rows)>;

/// Scores every fold's held-out rows on all students and on the
/// intervention subset; the aggregate is the mean over folds.
inline EvalReport evaluate(const FoldPredictor& predictor, const FoldPlan& plan, const LabeledView& view,
                           const Dataset& d, std::string model_name = {}) {
  if (plan.n != view.size()) {
    throw ContractError("fold plan covers " + std::to_string(plan.n) + " rows, labeled view has " +
                        std::to_string(view.size()));
  }
  EvalReport rep;
  rep.model = std::move(model_name);
  std::vector<MetricSet> all_sets, tx_sets;
  for (std::size_t f = 0; f < plan.k; ++f) {
    std::vector<std::size_t> rows;
    std::vector<int> labels;
    for (auto p : plan.test[f]) {
      rows.push_back(view.rows[p]);
      labels.push_back(view.labels[p]);
    }
    const auto probs = predictor(f, rows);
    if (probs.size() != rows.size()) throw ContractError("fold predictor returned the wrong number of probabilities");
    std::vector<double> tx_probs;
    std::vector<int> tx_labels;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (d.intervention[rows[i]] != 1) continue;
      tx_probs.push_back(probs[i]);
      tx_labels.push_back(labels[i]);
    }
    FoldResult fr{f, compute_metrics(probs, labels), compute_metrics(tx_probs, tx_labels)};
    all_sets.push_back(fr.all);
    tx_sets.push_back(fr.intervention);
    rep.folds.push_back(fr);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      rep.pooled.rows.push_back(rows[i]);
      rep.pooled.fold.push_back(f);
      rep.pooled.probs.push_back(probs[i]);
      rep.pooled.labels.push_back(labels[i]);
      rep.pooled.improvement.push_back(view.improvement[plan.test[f][i]]);
    }
  }
  rep.mean_all = mean_metrics(all_sets);
  rep.mean_intervention = mean_metrics(tx_sets);
  return rep;
}

/// evaluate() with one trained classifier per fold.
inline EvalReport evaluate(const std::vector<Classifier>& per_fold, const FoldPlan& plan, const LabeledView& view,
                           const Dataset& d) {
  if (per_fold.size() != plan.k) {
    throw ContractError("expected " + std::to_string(plan.k) + " classifiers, got " + std::to_string(per_fold.size()));
  }
  for (std::size_t f = 0; f < per_fold.size(); ++f) {
    if (per_fold[f].fold >= 0 && static_cast<std::size_t>(per_fold[f].fold) != f) {
      throw ContractError("classifier for fold " + std::to_string(per_fold[f].fold) + " supplied in slot " +
                          std::to_string(f));
    }
  }
  const std::string name = per_fold.empty() ? "" : to_string(per_fold.front().kind);
  return evaluate([&](std::size_t f, std::span<const std::size_t> rows) { return predict_proba(per_fold[f], d, rows); },
                  plan, view, d, name);
}

struct QuantileBucket {
  std::size_t index = 0;
  double lower = 0.0;  // smallest improvement in the bucket
  double upper = 0.0;  // largest improvement in the bucket
  std::size_t count = 0;
  MetricValue accuracy;
};

/// Accuracy within q improvement quantiles. Cut points are the order
/// statistics at ceil(b*n/q); rows equal to a cut point go to the lower
/// bucket.
inline std::vector<QuantileBucket> quantile_breakdown(std::span<const double> improvement, std::span<const double> probs,
                                                      std::span<const int> labels, std::size_t q = 5,
                                                      double threshold = 0.5) {
  if (q < 2) throw ContractError("quantile_breakdown needs q >= 2");
  if (improvement.size() != probs.size() || probs.size() != labels.size()) {
    throw ContractError("quantile_breakdown: input lengths differ");
  }
  const std::size_t n = improvement.size();
  if (n < q) throw ContractError("quantile_breakdown: fewer rows than buckets");
  std::vector<double> sorted(improvement.begin(), improvement.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> cuts;
  for (std::size_t b = 1; b < q; ++b) cuts.push_back(sorted[(b * n + q - 1) / q - 1]);

  std::vector<QuantileBucket> buckets(q);
  std::vector<std::size_t> correct(q, 0);
  for (std::size_t b = 0; b < q; ++b) buckets[b].index = b;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t b = static_cast<std::size_t>(std::lower_bound(cuts.begin(), cuts.end(), improvement[i]) - cuts.begin());
    auto& bk = buckets[b];
    if (bk.count == 0) {
      bk.lower = bk.upper = improvement[i];
    } else {
      bk.lower = std::min(bk.lower, improvement[i]);
      bk.upper = std::max(bk.upper, improvement[i]);
    }
    ++bk.count;
    correct[b] += ((probs[i] >= threshold) == (labels[i] == 1)) ? 1 : 0;
  }
  for (std::size_t b = 0; b < q; ++b) {
    if (buckets[b].count) buckets[b].accuracy = static_cast<double>(correct[b]) / static_cast<double>(buckets[b].count);
  }
  return buckets;
}

struct SubgroupRow {
  std::string value;
  std::size_t count = 0;
  bool low_support = false;
  MetricSet metrics;
};

/// Metrics per value of a subgroup tag; groups under `min_support` rows are
/// flagged.
inline std::vector<SubgroupRow> subgroup_breakdown(const Dataset& d, std::span<const std::size_t> rows,
                                                   std::span<const double> probs, std::span<const int> labels,
                                                   const std::string& tag, std::size_t min_support = 20) {
  const auto it = d.subgroups.find(tag);
  if (it == d.subgroups.end()) throw SchemaError("unknown subgroup tag '" + tag + "'");
  if (rows.size() != probs.size() || probs.size() != labels.size()) {
    throw ContractError("subgroup_breakdown: input lengths differ");
  }
  std::map<std::string, std::pair<std::vector<double>, std::vector<int>>> groups;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto& g = groups[it->second.at(rows[i])];
    g.first.push_back(probs[i]);
    g.second.push_back(labels[i]);
  }
  std::vector<SubgroupRow> out;
  for (const auto& [value, g] : groups) {
    SubgroupRow r;
    r.value = value;
    r.count = g.first.size();
    r.low_support = r.count < min_support;
    r.metrics = compute_metrics(g.first, g.second);
    out.push_back(std::move(r));
  }
  return out;
}

inline nlohmann::json metric_json(const MetricValue& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

inline nlohmann::json to_json(const MetricSet& m) {
  return {{"n", m.n},
          {"accuracy", metric_json(m.accuracy)},
          {"specificity", metric_json(m.specificity)},
          {"sensitivity", metric_json(m.sensitivity)},
          {"roc_auc", metric_json(m.roc_auc)},
          {"pr_auc", metric_json(m.pr_auc)}};
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  j["model"] = r.model;
  j["folds"] = nlohmann::json::array();
  for (const auto& f : r.folds) {
    j["folds"].push_back({{"fold", f.fold}, {"all", to_json(f.all)}, {"intervention", to_json(f.intervention)}});
  }
  j["mean"] = {{"all", to_json(r.mean_all)}, {"intervention", to_json(r.mean_intervention)}};
  return j;
}

}  // namespace maskmlp
