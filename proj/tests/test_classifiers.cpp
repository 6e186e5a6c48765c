#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "irrig/classifiers/model.hpp"
#include "irrig/core/log.hpp"
#include "irrig/core/parallel.hpp"
#include "support.hpp"

namespace irrig {
namespace {

/// Two Gaussian blobs of `n` samples each, `gap` standard deviations apart in every feature.
Dataset blobs(std::size_t n, int timesteps, double gap, std::uint64_t seed) {
  Rng rng = make_stream(seed, 1);
  Dataset d;
  d.layers = 1;
  d.timesteps = timesteps;
  std::vector<double> x(timesteps);
  for (int cls = 0; cls < 2; ++cls)
    for (std::size_t i = 0; i < n; ++i) {
      for (auto& v : x) v = cls * gap + standard_normal(rng);
      d.push(x, cls, 1.0, "r", static_cast<std::int64_t>(i));
    }
  return d;
}

Dataset random_dataset(std::size_t n, int timesteps, std::uint64_t seed) {
  Rng rng = make_stream(seed, 2);
  Dataset d;
  d.layers = 1;
  d.timesteps = timesteps;
  std::vector<double> x(timesteps);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& v : x) v = standard_normal(rng);
    d.push(x, static_cast<int>(uniform_index(rng, 2)), 0.5 + uniform01(rng), "r");
  }
  return d;
}

double accuracy(const std::vector<double>& p, const std::vector<int>& y) {
  std::size_t ok = 0;
  for (std::size_t i = 0; i < y.size(); ++i) ok += (p[i] >= 0.5 ? 1 : 0) == y[i];
  return static_cast<double>(ok) / static_cast<double>(y.size());
}

// ---------------------------------------------------------------------------
// random forest

TEST(RandomForest, SeparatesDistantBlobs) {
  const Dataset train = blobs(200, 6, 6.0, 1), test = blobs(200, 6, 6.0, 2);
  ForestParams p;
  p.trees = 50;
  p.seed = 3;
  const Forest f = fit_random_forest(train, p);
  std::vector<double> prob;
  for (std::size_t i = 0; i < test.size(); ++i) prob.push_back(f.predict(test.sample(i)));
  EXPECT_GE(accuracy(prob, test.labels), 0.99);
}

TEST(RandomForest, PredictionIsMeanOfTreesAndBounded) {
  const Dataset train = random_dataset(300, 5, 4);
  ForestParams p;
  p.trees = 10;
  p.seed = 9;
  const Forest f = fit_random_forest(train, p);
  ASSERT_EQ(f.trees.size(), 10u);
  for (std::size_t i = 0; i < train.size(); ++i) {
    double sum = 0.0;
    for (const auto& t : f.trees) sum += t.predict(train.sample(i));
    const double p_i = f.predict(train.sample(i));
    EXPECT_NEAR(p_i, sum / 10.0, 1e-15);
    EXPECT_GE(p_i, 0.0);
    EXPECT_LE(p_i, 1.0);
  }
}

TEST(RandomForest, MinimumLeafSizeIsRespected) {
  const Dataset train = random_dataset(200, 4, 5);
  ForestParams p;
  p.trees = 5;
  p.min_leaf = 5;
  const Forest f = fit_random_forest(train, p);
  for (const auto& t : f.trees)
    for (const auto& n : t.nodes)
      if (n.feature < 0) {
        EXPECT_GE(n.value, 0.0);
        EXPECT_LE(n.value, 1.0);
      }
  // Depth-limited by min_leaf: no tree can have more leaves than samples / min_leaf.
  for (const auto& t : f.trees) {
    const auto leaves = std::count_if(t.nodes.begin(), t.nodes.end(), [](const TreeNode& n) { return n.feature < 0; });
    EXPECT_LE(static_cast<std::size_t>(leaves), train.size() / 5);
  }
}

TEST(RandomForest, SingleClassGivesConstantPredictor) {
  Dataset d = blobs(20, 4, 3.0, 6);
  std::fill(d.labels.begin(), d.labels.end(), 1);
  log::ScopedCapture cap;
  const Forest f = fit_random_forest(d, ForestParams{.trees = 10});
  EXPECT_TRUE(cap.contains("single"));
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_EQ(f.predict(d.sample(i)), 1.0);
}

TEST(RandomForest, SeedDeterminesTrees) {
  const Dataset train = random_dataset(150, 4, 7);
  ForestParams p;
  p.trees = 8;
  p.seed = 11;
  const Forest a = fit_random_forest(train, p);
  set_default_threads(4);
  const Forest b = fit_random_forest(train, p);
  set_default_threads(1);
  EXPECT_EQ(a.trees, b.trees);
}

// ---------------------------------------------------------------------------
// gbdt

TEST(Gbdt, TrainingLossNeverIncreases) {
  const Dataset train = random_dataset(300, 6, 12);
  GbdtParams p;
  p.max_rounds = 60;
  p.depth = 3;
  const Gbdt g = fit_gbdt(train, p);
  ASSERT_EQ(g.train_logloss.size(), 60u);
  for (std::size_t i = 1; i < g.train_logloss.size(); ++i)
    EXPECT_LE(g.train_logloss[i], g.train_logloss[i - 1] + 1e-12) << "round " << i;
}

TEST(Gbdt, RoundCapBoundsTreeCount) {
  const Dataset train = blobs(100, 4, 2.0, 13);
  GbdtParams p;
  p.max_rounds = 7;
  const Gbdt g = fit_gbdt(train, p);
  EXPECT_LE(g.trees.size(), 7u);
  EXPECT_EQ(static_cast<int>(g.trees.size()), g.best_round);
}

TEST(Gbdt, EarlyStoppingKeepsBestValidationRound) {
  const Dataset train = random_dataset(200, 6, 14), valid = random_dataset(200, 6, 15);
  GbdtParams p;
  p.max_rounds = 300;
  p.early_stopping_rounds = 10;
  const Gbdt g = fit_gbdt(train, p, &valid);
  ASSERT_FALSE(g.valid_logloss.empty());
  EXPECT_LT(g.valid_logloss.size(), 300u);
  const auto best = std::min_element(g.valid_logloss.begin(), g.valid_logloss.end());
  EXPECT_EQ(g.best_round, static_cast<int>(best - g.valid_logloss.begin()) + 1);
  EXPECT_EQ(static_cast<int>(g.trees.size()), g.best_round);
}

TEST(Gbdt, ConstantLabelsGiveConstantLogit) {
  Dataset d = blobs(30, 4, 2.0, 16);
  std::fill(d.labels.begin(), d.labels.end(), 0);
  log::ScopedCapture cap;
  const Gbdt g = fit_gbdt(d, GbdtParams{});
  EXPECT_TRUE(cap.contains("single-class"));
  EXPECT_LE(g.trees.size(), 1u);
  const double z0 = g.logit(d.sample(0));
  for (std::size_t i = 1; i < d.size(); ++i) EXPECT_EQ(g.logit(d.sample(i)), z0);
  EXPECT_LT(g.predict(d.sample(0)), 1e-6);
}

TEST(Gbdt, DuplicatedSampleEqualsDoubledWeight) {
  Dataset base = random_dataset(80, 4, 17);
  std::fill(base.weights.begin(), base.weights.end(), 1.0);
  Dataset dup = base;
  dup.push(base.sample(5), base.labels[5], 1.0, "r");
  Dataset weighted = base;
  weighted.weights[5] = 2.0;
  GbdtParams p;
  p.max_rounds = 15;
  p.depth = 3;
  const Gbdt a = fit_gbdt(dup, p), b = fit_gbdt(weighted, p);
  ASSERT_EQ(a.trees.size(), b.trees.size());
  EXPECT_NEAR(a.base_logit, b.base_logit, 1e-12);
  for (std::size_t k = 0; k < a.trees.size(); ++k) {
    ASSERT_EQ(a.trees[k].nodes.size(), b.trees[k].nodes.size());
    for (std::size_t n = 0; n < a.trees[k].nodes.size(); ++n) {
      EXPECT_EQ(a.trees[k].nodes[n].feature, b.trees[k].nodes[n].feature);
      EXPECT_EQ(a.trees[k].nodes[n].threshold, b.trees[k].nodes[n].threshold);
      EXPECT_NEAR(a.trees[k].nodes[n].value, b.trees[k].nodes[n].value, 1e-9);
    }
  }
}

TEST(Gbdt, SeparatesDistantBlobs) {
  const Dataset train = blobs(200, 6, 6.0, 18), test = blobs(200, 6, 6.0, 19);
  GbdtParams p;
  p.max_rounds = 50;
  const Gbdt g = fit_gbdt(train, p);
  std::vector<double> prob;
  for (std::size_t i = 0; i < test.size(); ++i) prob.push_back(g.predict(test.sample(i)));
  EXPECT_GE(accuracy(prob, test.labels), 0.99);
}

// ---------------------------------------------------------------------------
// transformer

TransformerConfig small_config(int timesteps = 12) {
  TransformerConfig c;
  c.inputs = 1;
  c.timesteps = timesteps;
  c.d_model = 8;
  c.heads = 2;
  c.ff = 16;
  c.dense = 8;
  return c;
}

TEST(Transformer, ParameterCountMatchesLayerDimensions) {
  for (int L : {1, 6}) {
    TransformerConfig c;
    c.inputs = L;
    const std::size_t d = 32, f = 64, h = 32;
    const std::size_t embed = L * d + d;
    const std::size_t attention = 4 * (d * d + d);
    const std::size_t norms = 2 * 2 * d;
    const std::size_t feed_forward = d * f + f + f * d + d;
    const std::size_t dense = d * h + h;
    const std::size_t output = h + 1;
    EXPECT_EQ(TransformerNet(c).parameter_count(), embed + attention + norms + feed_forward + dense + output);
  }
  EXPECT_EQ(TransformerNet(TransformerConfig{}).parameter_count(), 9697u);
}

TEST(Transformer, InvalidHeadSplitRejected) {
  TransformerConfig c;
  c.heads = 5;
  EXPECT_THROW(TransformerNet{c}, NumericError);
}

TEST(Transformer, AnalyticGradientMatchesCentralDifferences) {
  const auto cfg = small_config();
  for (std::uint64_t seed : {1, 2, 3}) {
    TransformerNet net(cfg);
    net.initialize(seed);
    const Dataset d = random_dataset(16, cfg.timesteps, 100 + seed);
    const BatchView batch{d.features, d.labels, d.weights};
    const auto res = gradient_check(net, batch);
    // A probe that straddles a ReLU kink shows one-sided slopes differing by about twice the
    // central-difference error; a wrong gradient shows one-sided slopes that agree.
    std::size_t kinks = 0;
    for (std::size_t j = 0; j < net.parameter_count(); ++j) {
      const double a = res.analytic[j], n = res.numeric[j];
      if (std::abs(a - n) / std::max({std::abs(a), std::abs(n), kGradientCheckFloor}) < 1e-4) continue;
      const double h = 1e-5;
      TransformerNet probe = net;
      auto loss_at = [&](double dx) {
        probe.params()[j] = net.params()[j] + dx;
        return loss_and_gradient(probe, batch, nullptr, 1);
      };
      const double l0 = loss_at(0.0), up = (loss_at(h) - l0) / h, down = (l0 - loss_at(-h)) / h;
      EXPECT_GT(std::abs(up - down), std::abs(a - n)) << "seed " << seed << " parameter " << j;
      ++kinks;
    }
    EXPECT_LE(kinks, 1u) << "seed " << seed;
  }
}

TEST(Transformer, GradientCheckDetectsCorruptedMatrix) {
  const auto cfg = small_config();
  TransformerNet net(cfg);
  net.initialize(4);
  const Dataset d = random_dataset(16, cfg.timesteps, 104);
  const BatchView batch{d.features, d.labels, d.weights};
  const std::size_t off = net.layout().Wq, n = 8 * 8;
  const auto res = gradient_check(net, batch, [&](std::vector<double>& g) {
    for (std::size_t i = off; i < off + n; ++i) g[i] *= 2.0;
  });
  EXPECT_GT(res.max_relative_error, 0.3);
  EXPECT_GE(res.worst_parameter, off);
  EXPECT_LT(res.worst_parameter, off + n);
}

TEST(Transformer, OutputBiasGradientIsMeanWeightedResidual) {
  const auto cfg = small_config();
  TransformerNet net(cfg);
  net.initialize(5);
  const auto& lay = net.layout();
  std::fill_n(net.params().begin() + lay.wout, cfg.dense, 0.0);
  const double b = 0.3;
  net.params()[lay.bout] = b;
  const Dataset d = random_dataset(20, cfg.timesteps, 105);
  std::vector<double> grad;
  loss_and_gradient(net, {d.features, d.labels, d.weights}, &grad);
  double expected = 0.0;
  const double s = 1.0 / (1.0 + std::exp(-b));
  for (std::size_t i = 0; i < d.size(); ++i) expected += d.weights[i] * (s - d.labels[i]);
  expected /= static_cast<double>(d.size());
  EXPECT_NEAR(grad[lay.bout], expected, 1e-14);
}

TEST(Transformer, OutputIsProbabilityAndDeterministic) {
  const auto cfg = small_config();
  TransformerNet net(cfg);
  net.initialize(6);
  TransformerWorkspace ws;
  ws.resize(cfg);
  Rng rng = make_stream(6, 0);
  std::vector<double> x(cfg.timesteps);
  for (int k = 0; k < 50; ++k) {
    for (auto& v : x) v = 5.0 * standard_normal(rng);
    const double p1 = net.predict(x, ws), p2 = net.predict(x, ws);
    EXPECT_GE(p1, 0.0);
    EXPECT_LE(p1, 1.0);
    EXPECT_EQ(p1, p2);
  }
}

TEST(Transformer, GradientIndependentOfThreadCount) {
  const auto cfg = small_config();
  TransformerNet net(cfg);
  net.initialize(7);
  const Dataset d = random_dataset(37, cfg.timesteps, 107);
  const BatchView batch{d.features, d.labels, d.weights};
  std::vector<double> g1, g4;
  const double l1 = loss_and_gradient(net, batch, &g1, 1);
  const double l4 = loss_and_gradient(net, batch, &g4, 4);
  EXPECT_EQ(l1, l4);
  EXPECT_EQ(g1, g4);
}

TEST(Transformer, OverfitsSmallBatch) {
  const auto cfg = small_config(36);
  TransformerNet net(cfg);
  net.initialize(8);
  Dataset d = random_dataset(64, cfg.timesteps, 108);
  std::fill(d.weights.begin(), d.weights.end(), 1.0);
  const BatchView batch{d.features, d.labels, d.weights};
  AdamOptimizer opt;
  opt.learning_rate = 1e-2;
  std::vector<double> grad;
  for (int epoch = 0; epoch < 300; ++epoch) {
    loss_and_gradient(net, batch, &grad);
    opt.update(net.params(), grad);
  }
  TransformerWorkspace ws;
  ws.resize(cfg);
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const int y = net.predict(d.sample(i), ws) >= 0.5 ? 1 : 0;
    tp += y == 1 && d.labels[i] == 1;
    fp += y == 1 && d.labels[i] == 0;
    fn += y == 0 && d.labels[i] == 1;
  }
  EXPECT_EQ(fp + fn, 0u);
  EXPECT_GT(tp, 0u);
}

// ---------------------------------------------------------------------------
// model files

Dataset evi_samples(std::size_t n, std::uint64_t seed) {
  Dataset d = blobs(n, 36, 1.5, seed);
  for (auto& v : d.features) v = 0.3 + 0.05 * v;
  return d;
}

void expect_same_predictions(const TrainedModel& a, const Dataset& d, const irrig::testing::TempDir& dir,
                             const std::string& name) {
  save_model(a, dir / name);
  const TrainedModel b = load_model(dir / name);
  EXPECT_EQ(b.variant, a.variant);
  EXPECT_EQ(b.layers, a.layers);
  EXPECT_EQ(b.timesteps, a.timesteps);
  EXPECT_EQ(predict_proba(a, d), predict_proba(b, d));
}

TrainedModel wrap(ModelVariant v, const Dataset& d) {
  TrainedModel m;
  m.variant = v;
  m.layers = d.layers;
  m.timesteps = d.timesteps;
  m.standardizer = fit_standardizer(d);
  return m;
}

TEST(ModelFile, EveryVariantRoundtrips) {
  irrig::testing::TempDir dir("models");
  const Dataset d = evi_samples(40, 20);
  expect_same_predictions(make_reference_model(), d, dir, "reference");

  TrainedModel rf = wrap(ModelVariant::random_forest, d);
  const Dataset std_d = [&] {
    Dataset s = d;
    s.features = standardized_features(d, rf.standardizer);
    return s;
  }();
  rf.params = fit_random_forest(std_d, ForestParams{.trees = 5, .seed = 1});
  expect_same_predictions(rf, d, dir, "rf");

  TrainedModel gb = wrap(ModelVariant::gbdt, d);
  gb.params = fit_gbdt(std_d, GbdtParams{.max_rounds = 10});
  expect_same_predictions(gb, d, dir, "gbdt");

  TrainedModel tr = wrap(ModelVariant::transformer, d);
  TransformerConfig c;
  c.timesteps = 36;
  TransformerNet net(c);
  net.initialize(2);
  tr.params = net;
  expect_same_predictions(tr, d, dir, "net");
}

TEST(ModelFile, ShapeMismatchRejected) {
  const TrainedModel m = make_reference_model(36);
  const Dataset d = blobs(5, 12, 1.0, 21);
  EXPECT_THROW(predict_proba(m, d), ShapeError);
}

TEST(ModelFile, TruncatedBlobRejected) {
  irrig::testing::TempDir dir("models");
  const Dataset d = evi_samples(20, 22);
  TrainedModel gb = wrap(ModelVariant::gbdt, d);
  gb.params = fit_gbdt(d, GbdtParams{.max_rounds = 5});
  save_model(gb, dir / "g");
  const auto blob = dir / "g.model.bin";
  fs::resize_file(blob, fs::file_size(blob) - 8);
  EXPECT_THROW(load_model(dir / "g"), FormatError);
}

TEST(ModelFile, PredictionsIndependentOfThreadCount) {
  const Dataset d = evi_samples(100, 23);
  TrainedModel tr = wrap(ModelVariant::transformer, d);
  TransformerConfig c;
  TransformerNet net(c);
  net.initialize(3);
  tr.params = net;
  set_default_threads(1);
  const auto p1 = predict_proba(tr, d);
  set_default_threads(8);
  const auto p8 = predict_proba(tr, d);
  set_default_threads(1);
  EXPECT_EQ(p1, p8);
}

}  // namespace
}  // namespace irrig
