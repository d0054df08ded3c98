#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "maskmlp/data/labels.hpp"
#include "maskmlp/data/scaler.hpp"
#include "maskmlp/data/synth.hpp"
#include "maskmlp/finetune/classifier.hpp"
#include "test_util.hpp"

using namespace maskmlp;

namespace {

std::vector<std::size_t> all_rows(const Dataset& d) {
  std::vector<std::size_t> r(d.rows());
  std::iota(r.begin(), r.end(), 0);
  return r;
}

double accuracy(const std::vector<double>& p, const std::vector<int>& y) {
  std::size_t ok = 0;
  for (std::size_t i = 0; i < p.size(); ++i) ok += (p[i] >= 0.5) == (y[i] == 1);
  return static_cast<double>(ok) / static_cast<double>(p.size());
}

// Independent forward pass with plain loops.
double naive_probability(const MlpModel& m, std::vector<double> x) {
  for (const auto& l : m.layers) {
    std::vector<double> y(l.out_dim());
    for (std::size_t j = 0; j < l.out_dim(); ++j) {
      double s = l.bias[j];
      for (std::size_t i = 0; i < l.in_dim(); ++i) s += x[i] * l.weight(i, j);
      y[j] = s > 0.0 ? s : 0.0;
    }
    x = y;
  }
  double z = m.head->bias[0];
  for (std::size_t i = 0; i < x.size(); ++i) z += x[i] * m.head->weight(i, 0);
  return 1.0 / (1.0 + std::exp(-z));
}

struct Synth {
  Dataset d;
  LabeledView view;
  Scaler scaler;
};

Synth synth(std::uint64_t seed, std::size_t students = 600, double missing = 0.3048) {
  SynthConfig c;
  c.n_students = students;
  c.n_schools = 10;
  c.missing_rate = missing;
  c.seed = seed;
  Synth s{generate_synthetic(c), {}, {}};
  s.view = derive_labels(s.d, "word_identification");
  s.scaler = fit_scaler(s.d, all_rows(s.d));
  return s;
}

TrainConfig quick_cfg(std::size_t epochs = 5) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 64;
  return t;
}

}  // namespace

TEST(Finetune, ZeroEpochsKeepsEncoderAndInitialHead) {
  auto s = synth(1);
  auto cfg = quick_cfg(0);
  const auto enc = initial_encoder(16, 16, 2, 3);
  const auto c = finetune(enc, s.d, s.view, s.scaler, cfg, 3);
  EXPECT_EQ(c.model.layers, enc.layers);
  MlpModel expect = enc;
  Rng head_rng(derive_seed(3, "head"));
  attach_head(expect, head_rng);
  EXPECT_EQ(c.model.head, expect.head);
  EXPECT_EQ(c.epochs_run, 0u);
}

TEST(Finetune, EmptyViewIsTrainingError) {
  auto s = synth(1);
  const LabeledView empty;
  EXPECT_THROW(finetune(initial_encoder(16, 8, 1, 1), s.d, empty, s.scaler, quick_cfg(), 1), TrainingError);
  EXPECT_THROW(train_baseline(ModelKind::mlp_zeros, s.d, empty, s.scaler, quick_cfg(), 1), TrainingError);
  EXPECT_THROW(train_baseline(ModelKind::maskmlp, s.d, s.view, s.scaler, quick_cfg(), 1), ConfigError);
}

TEST(Finetune, SeparableToySetIsLearned) {
  Rng rng(4);
  std::vector<std::vector<double>> x;
  std::vector<int> y;
  while (x.size() < 600) {
    const double a = rng.uniform(), b = rng.uniform();
    if (std::abs(a + b - 1.0) < 0.05) continue;
    x.push_back({a, b});
    y.push_back(a + b > 1.0);
  }
  const auto d = test_util::toy_dataset(x, y);
  const auto view = derive_labels(d, "toy");
  ASSERT_EQ(view.labels, y);
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.patience = 200;
  cfg.learning_rate = 1e-2;
  cfg.batch_size = 32;
  const auto c = finetune(initial_encoder(2, 16, 2, 5), d, view, fit_scaler(d, all_rows(d)), cfg, 5);
  EXPECT_GE(accuracy(predict_proba(c, d, view.rows), y), 0.99);
}

TEST(Finetune, ValidationLossImprovesOnInitialization) {
  auto s = synth(2, 1000);
  const auto cfg = quick_cfg(20);
  const auto enc = initial_encoder(16, 32, 2, 6);
  const auto c = finetune(enc, s.d, s.view, s.scaler, cfg, 6);
  const auto [train_pos, val_pos] = grouped_validation_split(s.d, s.view, cfg.validation_fraction,
                                                             derive_seed(6, "validation"));
  ASSERT_FALSE(val_pos.empty());
  const auto val = s.view.subset(val_pos);
  const auto init = finetune(enc, s.d, s.view, s.scaler, quick_cfg(0), 6);
  auto bce = [&](const Classifier& k) {
    const auto p = predict_proba(k, s.d, val.rows);
    double l = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) l -= val.labels[i] ? std::log(p[i]) : std::log(1.0 - p[i]);
    return l / static_cast<double>(p.size());
  };
  EXPECT_LE(bce(c), bce(init));
  EXPECT_NEAR(bce(c), c.best_validation_loss, 1e-9);
}

TEST(Baseline, LogregFindsPlantedBinaryFeature) {
  Rng rng(7);
  std::vector<std::vector<double>> x;
  std::vector<int> y;
  for (int i = 0; i < 800; ++i) {
    const int b = rng.bernoulli(0.5);
    x.push_back({rng.uniform(), static_cast<double>(b), rng.uniform()});
    y.push_back(b);
  }
  const auto d = test_util::toy_dataset(x, y);
  const auto view = derive_labels(d, "toy");
  TrainConfig cfg;
  cfg.epochs = 300;
  cfg.patience = 300;
  cfg.learning_rate = 5e-2;
  const auto c = train_baseline(ModelKind::logreg, d, view, fit_scaler(d, all_rows(d)), cfg, 8);
  EXPECT_GE(accuracy(predict_proba(c, d, view.rows), y), 0.99);
  const auto& w = c.model.head->weight;
  EXPECT_GT(std::abs(w(1, 0)), 5.0 * std::abs(w(0, 0)));
  EXPECT_GT(std::abs(w(1, 0)), 5.0 * std::abs(w(2, 0)));
}

TEST(Baseline, LogregIsMonotoneInPositiveWeightFeatures) {
  auto s = synth(3);
  const auto c = train_baseline(ModelKind::logreg, s.d, s.view, s.scaler, quick_cfg(10), 9);
  const auto& w = c.model.head->weight;
  Dataset d = s.d;
  const std::size_t r = s.view.rows[0];
  for (std::size_t col = 0; col < d.features.cols(); ++col) {
    if (w(col, 0) <= 0.0 || d.schema.features()[col].kind == VariableKind::binary) continue;
    d.features.observed[r * d.features.cols() + col] = 1;
    d.features.values(r, col) = c.scaler.lo[col] + 0.2 * (c.scaler.hi[col] - c.scaler.lo[col]);
    const std::vector<std::size_t> one{r};
    const double lo = predict_proba(c, d, one)[0];
    d.features.values(r, col) = c.scaler.lo[col] + 0.8 * (c.scaler.hi[col] - c.scaler.lo[col]);
    EXPECT_GT(predict_proba(c, d, one)[0], lo) << d.schema.feature_names()[col];
  }
}

TEST(Baseline, ZerosAndIndicatorCoincideOnCompleteData) {
  auto s = synth(4, 400, 0.0);
  const auto a = train_baseline(ModelKind::mlp_zeros, s.d, s.view, s.scaler, quick_cfg(), 10, 16, 2);
  const auto b = train_baseline(ModelKind::mlp_indicator, s.d, s.view, s.scaler, quick_cfg(), 10, 16, 2);
  EXPECT_EQ(a.model.layers, b.model.layers);
  EXPECT_EQ(a.model.head, b.model.head);
}

TEST(Baseline, MeanPolicyFillsTrainingMean) {
  auto s = synth(5);
  const auto c = train_baseline(ModelKind::mlp_mean, s.d, s.view, s.scaler, quick_cfg(), 11, 16, 2);
  ASSERT_EQ(c.policy.means.size(), 16u);
  // Find a labeled row with a missing feature.
  std::size_t r = s.d.rows(), col = 0;
  for (auto row : s.view.rows) {
    for (std::size_t j = 0; j < 16 && r == s.d.rows(); ++j)
      if (!s.d.features.is_observed(row, j)) r = row, col = j;
    if (r != s.d.rows()) break;
  }
  ASSERT_LT(r, s.d.rows());
  const std::vector<std::size_t> one{r};
  Matrix filled = classifier_inputs(c, s.d, one);
  EXPECT_EQ(filled(0, col), c.policy.means[col]);
  // Same row with the cell "observed" at the training mean.
  Matrix manual(1, 16);
  for (std::size_t j = 0; j < 16; ++j)
    manual(0, j) = s.d.features.is_observed(r, j) ? s.scaler.scale(j, s.d.features.values(r, j)) : c.policy.means[j];
  EXPECT_EQ(predict_proba(c, s.d, one)[0], predict(c.model, manual)[0]);
}

TEST(Predict, ZeroHeadGivesOneHalf) {
  auto s = synth(6);
  auto c = train_baseline(ModelKind::mlp_indicator, s.d, s.view, s.scaler, quick_cfg(1), 12, 16, 2);
  c.model.head->weight.fill(0.0);
  c.model.head->bias.assign(1, 0.0);
  for (double p : predict_proba(c, s.d, s.view.rows)) EXPECT_EQ(p, 0.5);
}

TEST(Predict, BatchEqualsSingleRowsAndNaiveForward) {
  auto s = synth(7);
  const auto c = train_baseline(ModelKind::mlp_indicator, s.d, s.view, s.scaler, quick_cfg(2), 13, 16, 3);
  const std::vector<std::size_t> three{s.view.rows[0], s.view.rows[5], s.view.rows[9]};
  const auto batch = predict_proba(c, s.d, three);
  const auto inputs = classifier_inputs(c, s.d, three);
  for (std::size_t i = 0; i < 3; ++i) {
    const std::vector<std::size_t> one{three[i]};
    EXPECT_EQ(batch[i], predict_proba(c, s.d, one)[0]);
    const auto row = inputs.row(i);
    EXPECT_NEAR(batch[i], naive_probability(c.model, {row.begin(), row.end()}), 1e-12);
    EXPECT_GE(batch[i], 0.0);
    EXPECT_LE(batch[i], 1.0);
  }
}

TEST(Predict, SchemaMismatchIsContractError) {
  auto s = synth(8);
  const auto c = train_baseline(ModelKind::logreg, s.d, s.view, s.scaler, quick_cfg(1), 14);
  const auto other = s.d.drop_feature("Age1b");
  EXPECT_THROW(predict_proba(c, other, s.view.rows), ContractError);
}

TEST(Embeddings, ShapeDeterminismAndForwardOracle) {
  auto s = synth(9);
  const auto c = train_baseline(ModelKind::mlp_indicator, s.d, s.view, s.scaler, quick_cfg(1), 15);
  const std::vector<std::size_t> ten(s.view.rows.begin(), s.view.rows.begin() + 10);
  const auto e = export_embeddings(c, s.d, ten);
  EXPECT_EQ(e.rows(), 10u);
  EXPECT_EQ(e.cols(), 64u);
  EXPECT_TRUE(e == embed(c.model, classifier_inputs(c, s.d, ten)));
  const std::vector<std::size_t> twice{ten[3], ten[3]};
  const auto e2 = export_embeddings(c, s.d, twice);
  for (std::size_t j = 0; j < 64; ++j) EXPECT_EQ(e2(0, j), e2(1, j));
}

TEST(Embeddings, CsvHasOneLinePerRow) {
  auto s = synth(10, 300);
  const auto c = train_baseline(ModelKind::mlp_indicator, s.d, s.view, s.scaler, quick_cfg(1), 16, 8, 2);
  test_util::TempDir dir;
  write_embeddings_csv(dir.path() / "e.csv", c, s.d, s.view);
  std::ifstream in(dir.path() / "e.csv");
  std::string header, line;
  std::getline(in, header);
  EXPECT_EQ(header, "student_id,label,improvement,Tx,Gender,at_risk,frl,e0,e1,e2,e3,e4,e5,e6,e7");
  std::size_t n = 0;
  while (std::getline(in, line)) ++n;
  EXPECT_EQ(n, s.view.size());
}

TEST(Validation, SplitIsGroupedBySchool) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto s = synth(seed, 400);
    const auto [train, val] = grouped_validation_split(s.d, s.view, 0.1, seed);
    EXPECT_EQ(train.size() + val.size(), s.view.size());
    EXPECT_FALSE(val.empty());
    std::set<std::string> a, b;
    for (auto i : train) a.insert(s.d.school_ids[s.view.rows[i]]);
    for (auto i : val) b.insert(s.d.school_ids[s.view.rows[i]]);
    for (const auto& sch : b) EXPECT_FALSE(a.count(sch)) << sch;
    EXPECT_GE(static_cast<double>(val.size()), 0.1 * s.view.size());
  }
}

TEST(Checkpoint, TrainingIsDeterministicAndRoundTrips) {
  auto s = synth(11);
  for (auto kind : {ModelKind::mlp_mean, ModelKind::logreg}) {
    const auto a = train_baseline(kind, s.d, s.view, s.scaler, quick_cfg(3), 17, 16, 2);
    const auto b = train_baseline(kind, s.d, s.view, s.scaler, quick_cfg(3), 17, 16, 2);
    EXPECT_EQ(serialize_checkpoint(classifier_checkpoint(a)), serialize_checkpoint(classifier_checkpoint(b)));
    const auto back = classifier_from_checkpoint(deserialize_checkpoint(serialize_checkpoint(classifier_checkpoint(a))));
    EXPECT_EQ(back.kind, kind);
    EXPECT_EQ(predict_proba(back, s.d, s.view.rows), predict_proba(a, s.d, s.view.rows));
  }
  const auto m = finetune(initial_encoder(16, 16, 2, 18), s.d, s.view, s.scaler, quick_cfg(2), 18);
  const auto back = classifier_from_checkpoint(classifier_checkpoint(m));
  EXPECT_EQ(back.policy.kind, FillKind::mask_pretrain);
  EXPECT_EQ(predict_proba(back, s.d, s.view.rows), predict_proba(m, s.d, s.view.rows));
}

TEST(TrainConfig, Validation) {
  TrainConfig t;
  t.validation_fraction = 0.5;
  EXPECT_THROW(t.validate(), ConfigError);
  t.validation_fraction = 0.0;
  EXPECT_THROW(t.validate(), ConfigError);
  EXPECT_THROW(model_kind_from_string("xgboost"), ConfigError);
  EXPECT_EQ(model_kind_from_string("mlp-zeros"), ModelKind::mlp_zeros);
}
