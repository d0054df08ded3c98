#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "maskmlp/data/labels.hpp"
#include "maskmlp/data/synth.hpp"
#include "maskmlp/eval/evaluate.hpp"
#include "maskmlp/eval/folds.hpp"
#include "maskmlp/eval/metrics.hpp"
#include "maskmlp/eval/stats.hpp"
#include "test_util.hpp"

using namespace maskmlp;

namespace {

std::vector<std::string> random_groups(std::size_t n, std::size_t n_groups, Rng& rng) {
  std::vector<std::string> g(n);
  for (auto& s : g) s = "g" + std::to_string(rng.below(n_groups));
  return g;
}

// O(n^2) Mann-Whitney over every (positive, negative) pair.
double all_pairs_auc(const std::vector<double>& p, const std::vector<int>& y) {
  long wins2 = 0, pairs = 0;
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t j = 0; j < p.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        ++pairs;
        wins2 += p[i] > p[j] ? 2 : p[i] == p[j] ? 1 : 0;
      }
  return static_cast<double>(wins2) / 2.0 / static_cast<double>(pairs);
}

// Two-tailed p of Student's t by Simpson integration of the density.
double quadrature_two_tailed_p(double t, double df) {
  const double c = std::exp(std::lgamma((df + 1) / 2) - std::lgamma(df / 2)) / std::sqrt(df * M_PI);
  auto f = [&](double x) { return c * std::pow(1.0 + x * x / df, -(df + 1) / 2); };
  const int n = 200000;
  const double h = std::abs(t) / n;
  double s = f(0) + f(std::abs(t));
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(i * h);
  return 1.0 - 2.0 * s * h / 3.0;
}

std::vector<int> random_labels(std::size_t n, Rng& rng) {
  std::vector<int> y(n);
  for (auto& v : y) v = rng.bernoulli(0.4);
  y[0] = 1;
  y[1] = 0;
  return y;
}

}  // namespace

TEST(Folds, FiveSchoolsFiveFoldsGivesOneSchoolEach) {
  std::vector<std::string> g;
  for (int s = 0; s < 5; ++s)
    for (int i = 0; i < 10 + 3 * s; ++i) g.push_back("school" + std::to_string(s));
  const auto plan = make_folds(g, 5, SplitMode::school, 1);
  for (std::size_t f = 0; f < 5; ++f) EXPECT_EQ(plan.test_groups[f].size(), 1u);
}

TEST(Folds, PartitionAndLeakageOverRandomPlans) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 20 + rng.below(200);
    const std::size_t k = 2 + rng.below(5);
    const auto g = random_groups(n, k + rng.below(30), rng);
    const std::set<std::string> distinct(g.begin(), g.end());
    if (distinct.size() < k) {
      EXPECT_THROW(make_folds(g, k, SplitMode::school, trial), ConfigError);
      continue;
    }
    const auto plan = make_folds(g, k, trial % 2 ? SplitMode::student : SplitMode::school, trial);
    std::vector<int> seen(n, 0);
    for (std::size_t f = 0; f < k; ++f) {
      for (auto p : plan.test[f]) ++seen[p];
      std::set<std::string> test_g, train_g;
      for (auto p : plan.test[f]) test_g.insert(g[p]);
      for (auto p : plan.train(f)) train_g.insert(g[p]);
      for (const auto& x : test_g) EXPECT_FALSE(train_g.count(x));
      EXPECT_EQ(plan.test[f].size() + plan.train(f).size(), n);
    }
    for (int s : seen) EXPECT_EQ(s, 1);
  }
}

TEST(Folds, FortyFourSchoolsAreBalanced) {
  SynthConfig c;
  c.n_students = 5000;
  c.n_schools = 44;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    c.seed = seed;
    const auto d = generate_synthetic(c);
    const auto plan = make_folds(d.school_ids, 5, SplitMode::school, seed);
    std::size_t lo = d.rows(), hi = 0;
    for (const auto& t : plan.test) lo = std::min(lo, t.size()), hi = std::max(hi, t.size());
    EXPECT_LE(static_cast<double>(hi) / static_cast<double>(lo), 1.5);
  }
}

TEST(Folds, DeterministicPerSeed) {
  Rng rng(3);
  const auto g = random_groups(300, 25, rng);
  const auto a = make_folds(g, 5, SplitMode::school, 9), b = make_folds(g, 5, SplitMode::school, 9);
  EXPECT_EQ(a.test, b.test);
  EXPECT_NE(a.test, make_folds(g, 5, SplitMode::school, 10).test);
  EXPECT_THROW(make_folds(g, 1, SplitMode::school, 1), ConfigError);
  EXPECT_THROW(split_mode_from_string("teacher"), ConfigError);
}

TEST(Confusion, HandCases) {
  const auto perfect = confusion_metrics(std::vector<double>{0.9, 0.1}, std::vector<int>{1, 0});
  EXPECT_EQ(perfect.accuracy, 1.0);
  EXPECT_EQ(perfect.specificity, 1.0);
  EXPECT_EQ(perfect.sensitivity, 1.0);
  const auto allpos = confusion_metrics(std::vector<double>{0.9, 0.8, 0.7, 0.6}, std::vector<int>{1, 0, 1, 0});
  EXPECT_EQ(allpos.accuracy, 0.5);
  EXPECT_EQ(allpos.specificity, 0.0);
  EXPECT_EQ(allpos.sensitivity, 1.0);
  const auto onlyneg = confusion_metrics(std::vector<double>{0.2, 0.7}, std::vector<int>{0, 0});
  EXPECT_FALSE(onlyneg.sensitivity.has_value());
  EXPECT_THROW(confusion_metrics(std::vector<double>{}, std::vector<int>{}), ContractError);
  EXPECT_THROW(confusion_metrics(std::vector<double>{0.5}, std::vector<int>{2}), ContractError);
}

TEST(Confusion, MatchesLoopCounting) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> p(200);
    for (auto& v : p) v = rng.uniform();
    const auto y = random_labels(200, rng);
    int tp = 0, tn = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < 200; ++i) {
      const bool pred = p[i] >= 0.5;
      tp += pred && y[i];
      tn += !pred && !y[i];
      fp += pred && !y[i];
      fn += !pred && y[i];
    }
    const auto m = confusion_metrics(p, y);
    EXPECT_EQ(m.accuracy, (tp + tn) / 200.0);
    EXPECT_EQ(*m.specificity, static_cast<double>(tn) / (tn + fp));
    EXPECT_EQ(*m.sensitivity, static_cast<double>(tp) / (tp + fn));
  }
}

TEST(RocAuc, HandCasesAndUndefined) {
  EXPECT_EQ(roc_auc(std::vector<double>{0.1, 0.4, 0.8, 0.9}, std::vector<int>{0, 0, 1, 1}), 1.0);
  EXPECT_EQ(roc_auc(std::vector<double>{0.5, 0.5, 0.5}, std::vector<int>{0, 1, 1}), 0.5);
  EXPECT_FALSE(roc_auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}).has_value());
  EXPECT_FALSE(pr_auc(std::vector<double>{0.1, 0.2}, std::vector<int>{0, 0}).has_value());
  EXPECT_EQ(pr_auc(std::vector<double>{0.1, 0.4, 0.8, 0.9}, std::vector<int>{0, 0, 1, 1}), 1.0);
}

TEST(RocAuc, EqualsAllPairsOracleWithTies) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> p(50);
    for (auto& v : p) v = static_cast<double>(rng.below(12)) / 11.0;  // many ties
    const auto y = random_labels(50, rng);
    EXPECT_EQ(*roc_auc(p, y), all_pairs_auc(p, y));
  }
}

TEST(RocAuc, ComplementSymmetryAndMonotoneInvariance) {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> p(60);
    for (auto& v : p) v = static_cast<double>(rng.below(20)) / 19.0;
    const auto y = random_labels(60, rng);
    std::vector<int> flipped(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) flipped[i] = 1 - y[i];
    EXPECT_NEAR(*roc_auc(p, y) + *roc_auc(p, flipped), 1.0, 1e-15);
    std::vector<double> q(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) q[i] = std::exp(3.0 * p[i]) - 7.0;
    EXPECT_EQ(*roc_auc(q, y), *roc_auc(p, y));
    EXPECT_EQ(*pr_auc(q, y), *pr_auc(p, y));
  }
}

TEST(PrAuc, MatchesFrozenAveragePrecision) {
  // Average precision from a reference implementation for this input.
  const std::vector<int> y{1, 0, 1, 1, 0, 0, 1, 0, 1, 0};
  const std::vector<double> p{0.9, 0.8, 0.7, 0.7, 0.6, 0.4, 0.35, 0.3, 0.2, 0.1};
  EXPECT_NEAR(*pr_auc(p, y), 0.7253968253968255, 1e-15);
  EXPECT_NEAR(*roc_auc(p, y), 0.64, 1e-15);
}

TEST(TTest, HandExampleAndDegenerateCase) {
  const std::vector<double> a{1, 1, 1, 1, 2}, b{0, 0, 0, 0, 0};
  const auto r = paired_t_test(a, b);
  EXPECT_NEAR(r.t, 6.0, 1e-12);
  EXPECT_EQ(r.df, 4.0);
  EXPECT_NEAR(r.p, 0.0039, 5e-5);
  EXPECT_NEAR(r.p, 0.003882537046960512, 1e-10);
  EXPECT_THROW(paired_t_test(a, a), DegenerateTestError);
  EXPECT_THROW(paired_t_test(std::vector<double>{1}, std::vector<double>{0}), ContractError);
}

TEST(TTest, MatchesFrozenReferenceValues) {
  const std::vector<double> a1{0.71, 0.74, 0.69, 0.77, 0.73}, b1{0.70, 0.71, 0.70, 0.74, 0.70};
  const auto r1 = paired_t_test(a1, b1);
  EXPECT_NEAR(r1.t, 2.25, 1e-9);
  EXPECT_NEAR(r1.p, 0.08764517650339462, 1e-9);
  const std::vector<double> a2{0.61, 0.65, 0.58, 0.66, 0.62, 0.60, 0.64}, b2{0.60, 0.66, 0.55, 0.61, 0.62, 0.57, 0.60};
  const auto r2 = paired_t_test(a2, b2);
  EXPECT_NEAR(r2.t, 2.585182453296416, 1e-9);
  EXPECT_NEAR(r2.p, 0.0414795201345442, 1e-9);
  // Upper tail at t = 3.876 with 4 df.
  EXPECT_NEAR(1.0 - student_t_cdf(3.876, 4), 0.008950986893176615, 1e-10);
}

TEST(TTest, MatchesQuadratureOnRandomFoldVectors) {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 3 + rng.below(8);
    std::vector<double> a(k), b(k);
    for (std::size_t i = 0; i < k; ++i) {
      b[i] = rng.uniform(0.6, 0.8);
      a[i] = b[i] + rng.normal(0.01, 0.02);
    }
    const auto r = paired_t_test(a, b);
    EXPECT_NEAR(r.p, quadrature_two_tailed_p(r.t, r.df), 1e-6) << "k=" << k << " t=" << r.t;
    EXPECT_NEAR(student_t_cdf(r.t, r.df) + student_t_cdf(-r.t, r.df), 1.0, 1e-12);
  }
}

TEST(IncompleteBeta, KnownClosedForms) {
  // I_x(1, 1) = x and I_x(a, 1) = x^a.
  for (double x : {0.0, 0.1, 0.5, 0.9, 1.0}) {
    EXPECT_NEAR(regularized_incomplete_beta(1, 1, x), x, 1e-14);
    EXPECT_NEAR(regularized_incomplete_beta(2.5, 1, x), std::pow(x, 2.5), 1e-13);
  }
}

TEST(Quantiles, OneToTenInFiveBuckets) {
  std::vector<double> imp(10), probs(10, 0.9);
  std::vector<int> labels(10, 1);
  std::iota(imp.begin(), imp.end(), 1.0);
  const auto b = quantile_breakdown(imp, probs, labels, 5);
  ASSERT_EQ(b.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(b[i].count, 2u);
    EXPECT_EQ(b[i].lower, 2.0 * i + 1);
    EXPECT_EQ(b[i].upper, 2.0 * i + 2);
    EXPECT_EQ(b[i].accuracy, 1.0);
  }
  EXPECT_THROW(quantile_breakdown(std::span(imp).first(4), std::span(probs).first(4), std::span(labels).first(4), 5),
               ContractError);
  EXPECT_THROW(quantile_breakdown(imp, probs, labels, 1), ContractError);
}

TEST(Quantiles, MembershipMatchesRankOracle) {
  Rng rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 10 + rng.below(200), q = 2 + rng.below(9);
    if (n < q) continue;
    std::vector<double> imp(n), probs(n);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      imp[i] = static_cast<double>(rng.below(15)) - 7.0;  // heavy ties
      probs[i] = rng.uniform();
      labels[i] = rng.bernoulli(0.5);
    }
    // Bucket of a row = min(q-1, floor(q * #strictly-smaller / n)).
    std::vector<std::size_t> count(q, 0), correct(q, 0);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t less = 0;
      for (double v : imp) less += v < imp[i];
      const std::size_t b = std::min(q - 1, q * less / n);
      ++count[b];
      correct[b] += (probs[i] >= 0.5) == (labels[i] == 1);
    }
    const auto got = quantile_breakdown(imp, probs, labels, q);
    for (std::size_t b = 0; b < q; ++b) {
      EXPECT_EQ(got[b].count, count[b]);
      if (count[b]) {
        EXPECT_EQ(*got[b].accuracy, static_cast<double>(correct[b]) / count[b]);
      }
    }
  }
}

namespace {

struct EvalFixture {
  Dataset d;
  LabeledView view;
  FoldPlan plan;
};

EvalFixture eval_fixture(std::uint64_t seed) {
  SynthConfig c;
  c.n_students = 800;
  c.n_schools = 12;
  c.seed = seed;
  EvalFixture f{generate_synthetic(c), {}, {}};
  f.view = derive_labels(f.d, "word_identification");
  std::vector<std::string> groups;
  for (auto r : f.view.rows) groups.push_back(f.d.school_ids[r]);
  f.plan = make_folds(groups, 5, SplitMode::school, seed);
  return f;
}

}  // namespace

TEST(Evaluate, OracleAndConstantPredictors) {
  const auto f = eval_fixture(1);
  std::map<std::size_t, int> label_of;
  for (std::size_t i = 0; i < f.view.size(); ++i) label_of[f.view.rows[i]] = f.view.labels[i];
  const auto oracle = evaluate(
      [&](std::size_t, std::span<const std::size_t> rows) {
        std::vector<double> p;
        for (auto r : rows) p.push_back(label_of[r]);
        return p;
      },
      f.plan, f.view, f.d, "oracle");
  EXPECT_EQ(*oracle.mean_all.accuracy, 1.0);
  EXPECT_EQ(*oracle.mean_all.roc_auc, 1.0);
  EXPECT_EQ(*oracle.mean_all.pr_auc, 1.0);
  EXPECT_EQ(*oracle.mean_intervention.accuracy, 1.0);
  const auto half = evaluate(
      [](std::size_t, std::span<const std::size_t> rows) { return std::vector<double>(rows.size(), 0.5); }, f.plan,
      f.view, f.d);
  for (const auto& fr : half.folds) EXPECT_EQ(*fr.all.roc_auc, 0.5);
  EXPECT_EQ(half.pooled.rows.size(), f.view.size());
}

TEST(Evaluate, InterventionSubsetMatchesFilteredRecomputation) {
  const auto f = eval_fixture(2);
  Rng rng(3);
  std::map<std::size_t, double> score;
  for (auto r : f.view.rows) score[r] = rng.uniform();
  const auto rep = evaluate(
      [&](std::size_t, std::span<const std::size_t> rows) {
        std::vector<double> p;
        for (auto r : rows) p.push_back(score[r]);
        return p;
      },
      f.plan, f.view, f.d);
  std::vector<double> means;
  for (std::size_t fold = 0; fold < 5; ++fold) {
    std::vector<double> p;
    std::vector<int> y;
    for (auto pos : f.plan.test[fold]) {
      if (f.d.intervention[f.view.rows[pos]] != 1) continue;
      p.push_back(score[f.view.rows[pos]]);
      y.push_back(f.view.labels[pos]);
    }
    const auto cm = confusion_metrics(p, y);
    EXPECT_EQ(*rep.folds[fold].intervention.accuracy, cm.accuracy);
    EXPECT_EQ(*rep.folds[fold].intervention.roc_auc, *roc_auc(p, y));
    EXPECT_LE(rep.folds[fold].intervention.n, rep.folds[fold].all.n);
    means.push_back(cm.accuracy);
  }
  EXPECT_NEAR(*rep.mean_intervention.accuracy, std::accumulate(means.begin(), means.end(), 0.0) / 5.0, 1e-15);
}

TEST(Evaluate, MismatchesAreContractErrors) {
  const auto f = eval_fixture(3);
  EXPECT_THROW(evaluate(std::vector<Classifier>(3), f.plan, f.view, f.d), ContractError);
  auto short_view = f.view.subset(std::vector<std::size_t>{0, 1, 2});
  EXPECT_THROW(evaluate([](std::size_t, std::span<const std::size_t> r) { return std::vector<double>(r.size(), 0.5); },
                        f.plan, short_view, f.d),
               ContractError);
  EXPECT_THROW(evaluate([](std::size_t, std::span<const std::size_t>) { return std::vector<double>(1, 0.5); }, f.plan,
                        f.view, f.d),
               ContractError);
}

TEST(Subgroups, CollapsePartitionAndFilterOracle) {
  auto f = eval_fixture(4);
  Rng rng(5);
  std::vector<double> probs(f.view.size());
  for (auto& p : probs) p = rng.uniform();
  const auto overall = compute_metrics(probs, f.view.labels);

  f.d.subgroups["one"] = std::vector<std::string>(f.d.rows(), "x");
  const auto single = subgroup_breakdown(f.d, f.view.rows, probs, f.view.labels, "one");
  ASSERT_EQ(single.size(), 1u);
  EXPECT_EQ(single[0].metrics.accuracy, overall.accuracy);
  EXPECT_EQ(single[0].metrics.roc_auc, overall.roc_auc);

  const auto by_gender = subgroup_breakdown(f.d, f.view.rows, probs, f.view.labels, "Gender");
  ASSERT_EQ(by_gender.size(), 2u);
  double weighted = 0.0;
  for (const auto& g : by_gender) weighted += *g.metrics.accuracy * g.count;
  EXPECT_NEAR(weighted / f.view.size(), *overall.accuracy, 1e-12);

  for (const auto& g : by_gender) {
    std::vector<double> p;
    std::vector<int> y;
    for (std::size_t i = 0; i < f.view.size(); ++i)
      if (f.d.subgroups.at("Gender")[f.view.rows[i]] == g.value) p.push_back(probs[i]), y.push_back(f.view.labels[i]);
    const auto cm = confusion_metrics(p, y);
    EXPECT_EQ(*g.metrics.accuracy, cm.accuracy);
    EXPECT_EQ(g.metrics.sensitivity, cm.sensitivity);
    EXPECT_EQ(g.metrics.roc_auc, roc_auc(p, y));
  }
  const auto flagged = subgroup_breakdown(f.d, f.view.rows, probs, f.view.labels, "Gender", 100000);
  for (const auto& g : flagged) EXPECT_TRUE(g.low_support);
  EXPECT_THROW(subgroup_breakdown(f.d, f.view.rows, probs, f.view.labels, "ethnicity"), SchemaError);
}

TEST(Report, UndefinedMetricsSerializeAsNull) {
  MetricSet m;
  m.accuracy = 0.5;
  const auto j = to_json(m);
  EXPECT_EQ(j["accuracy"], 0.5);
  EXPECT_TRUE(j["roc_auc"].is_null());
}
