#include <gtest/gtest.h>

#include <filesystem>

#include "advrep/datasets.hpp"
#include "advrep/models.hpp"
#include "oracles.hpp"

using namespace advrep;

namespace {

std::vector<std::size_t> conv_filters(const Network& net) {
  std::vector<std::size_t> out;
  for (const auto& l : net.layers)
    if (l.kind == LayerKind::Conv) out.push_back(net.params[l.weight].shape[0]);
  return out;
}

std::vector<std::size_t> dense_units(const Network& net) {
  std::vector<std::size_t> out;
  for (const auto& l : net.layers)
    if (l.kind == LayerKind::Dense) out.push_back(net.params[l.weight].shape[1]);
  return out;
}

/// Preprocessed full-contrast glyph splits at 32×32 shared by the training
/// fixtures. The faint default intensity is meant as a reprogramming target.
struct GlyphFixture {
  LabeledDataset train, test;
};

const GlyphFixture& glyphs() {
  static const GlyphFixture f = [] {
    SynthOptions o;
    o.per_class = 100;
    o.intensity = 255.0;
    const PadSpec pad{3, 32, 32, 28, 28, {}};
    GlyphFixture g;
    g.train = preprocess(synth_target_dataset(101, o), pad);
    o.per_class = 30;
    g.test = preprocess(synth_target_dataset(202, o), pad);
    return g;
  }();
  return f;
}

Network fresh_small(std::uint64_t seed) {
  Network net = build_cwnet({3, 32, 32}, 10, 0.25);
  net.input_stats = channel_stats(glyphs().train);
  return init_weights(std::move(net), seed);
}

/// Trained once and shared: 10 epochs with the reference hyperparameters.
const TrainResult& trained_small() {
  static const TrainResult r = [] {
    TrainConfig cfg;
    cfg.seed = 5;
    return train_sgd(fresh_small(3), glyphs().train, cfg);
  }();
  return r;
}

}  // namespace

// --- build ------------------------------------------------------------------

TEST(BuildCwnet, FullScaleCounts) {
  const Network net = build_cwnet({3, 224, 224}, 10, 1.0);
  EXPECT_EQ(conv_filters(net), (std::vector<std::size_t>{32, 32, 64, 64}));
  EXPECT_EQ(dense_units(net), (std::vector<std::size_t>{200, 200, 10}));
  // FC input comes from the shape chain: 64 channels at 56×56.
  for (const auto& l : net.layers)
    if (l.kind == LayerKind::Dense) {
      EXPECT_EQ(net.params[l.weight].shape[0], 64u * 56u * 56u);
      break;
    }
}

TEST(BuildCwnet, QuarterScaleCounts) {
  const Network net = build_cwnet({3, 32, 32}, 10, 0.25);
  EXPECT_EQ(conv_filters(net), (std::vector<std::size_t>{8, 8, 16, 16}));
  EXPECT_EQ(dense_units(net), (std::vector<std::size_t>{50, 50, 10}));
}

TEST(BuildCwnet, LayerOrderMirrorsArchitecture) {
  const Network net = build_cwnet({3, 32, 32}, 10, 0.25);
  using K = LayerKind;
  const std::vector<K> expect{K::Standardize, K::Conv, K::Relu, K::Conv,    K::Relu,  K::MaxPool, K::Conv,
                              K::Relu,        K::Conv, K::Dropout, K::Relu, K::MaxPool, K::Flatten, K::Dense,
                              K::Relu,        K::Dense, K::Relu, K::Dense};
  std::vector<K> got;
  for (const auto& l : net.layers) got.push_back(l.kind);
  EXPECT_EQ(got, expect);
}

TEST(BuildCwnet, IndivisibleExtentsAreDimensionErrors) {
  EXPECT_THROW(build_cwnet({3, 30, 32}, 10, 0.25), DimensionError);
  EXPECT_THROW(build_cwnet({3, 32, 6}, 10, 0.25), DimensionError);
  EXPECT_THROW(build_cwnet({32, 32}, 10, 0.25), DimensionError);
}

TEST(BuildCwnet, RandomInputGivesFiniteLogits) {
  const Network net = init_weights(build_cwnet({3, 32, 32}, 10, 0.25), 1);
  const auto z = logits_of(net, oracle::random_tensor({3, 32, 32}, 9));
  ASSERT_EQ(z.size(), 10u);
  for (double v : z) EXPECT_TRUE(std::isfinite(v));
}

TEST(BuildCwnet, WrongInputShapeIsRejected) {
  const Network net = init_weights(build_cwnet({3, 32, 32}, 10, 0.25), 1);
  EXPECT_THROW(logits_of(net, Tensor({3, 16, 16})), DimensionError);
}

// --- init -------------------------------------------------------------------

TEST(InitWeights, SameSeedIdentical) {
  const auto a = init_weights(build_cwnet({3, 32, 32}, 10, 0.25), 42);
  const auto b = init_weights(build_cwnet({3, 32, 32}, 10, 0.25), 42, InitMode::UntrainedRandom);
  ASSERT_EQ(a.params.size(), b.params.size());
  for (std::size_t i = 0; i < a.params.size(); ++i) EXPECT_EQ(a.params[i], b.params[i]);
}

TEST(InitWeights, EmpiricalStdMatchesUniformBound) {
  const auto net = init_weights(build_cwnet({3, 32, 32}, 10, 0.25), 7);
  for (const auto& l : net.layers) {
    if (l.weight == kNoParam) continue;
    const auto& w = net.params[l.weight];
    const std::size_t fan_in = l.kind == LayerKind::Conv ? w.shape[1] * 9 : w.shape[0];
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    double s = 0, ss = 0;
    for (double v : w.data) {
      EXPECT_LE(std::abs(v), bound);
      s += v;
      ss += v * v;
    }
    const double n = static_cast<double>(w.size());
    const double sd = std::sqrt(ss / n - (s / n) * (s / n));
    if (fan_in >= 100) {
      EXPECT_NEAR(sd, bound / std::sqrt(3.0), 0.2 * bound / std::sqrt(3.0)) << "fan_in " << fan_in;
    }
    if (l.bias != kNoParam) {
      for (double v : net.params[l.bias].data) EXPECT_EQ(v, 0.0);
    }
  }
}

TEST(InitWeights, DifferentSeedsDifferInEveryLayer) {
  const auto a = init_weights(build_cwnet({3, 32, 32}, 10, 0.25), 0);
  const auto b = init_weights(build_cwnet({3, 32, 32}, 10, 0.25), 1);
  for (const auto& l : a.layers)
    if (l.weight != kNoParam) {
      EXPECT_NE(a.params[l.weight], b.params[l.weight]);
    }
}

// --- training -----------------------------------------------------------------

TEST(TrainSgd, ZeroLearningRateLeavesParametersUntouched) {
  SynthOptions o;
  o.per_class = 2;
  const auto ds = preprocess(synth_target_dataset(1, o), PadSpec{3, 32, 32, 28, 28, {}});
  const Network net = init_weights(build_cwnet({3, 32, 32}, 10, 0.25), 4);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.learning_rate = 0.0;
  const auto r = train_sgd(net, ds, cfg);
  for (std::size_t i = 0; i < net.params.size(); ++i) EXPECT_EQ(r.net.params[i].data, net.params[i].data);
}

TEST(TrainSgd, DenseSoftmaxStepMatchesHandGradient) {
  Network net = build_linear({1, 1, 3}, 4);
  net = init_weights(std::move(net), 8);
  const Tensor w0 = net.params[0];
  LabeledDataset ds;
  ds.images = Tensor({1, 1, 1, 3}, {0.5, -1.25, 2.0});
  ds.labels = {2};
  ds.num_classes = 4;
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 1;
  cfg.learning_rate = 0.1;
  cfg.momentum = 0.0;
  const auto r = train_sgd(net, ds, cfg);

  // z = xW (+ zero bias); dL/dW = x ⊗ (softmax(z) − onehot).
  std::vector<long double> z(4, 0.0L), p(4);
  for (std::size_t j = 0; j < 4; ++j)
    for (std::size_t i = 0; i < 3; ++i) z[j] += ds.images[i] * w0.data[i * 4 + j];
  long double zs = 0.0L;
  for (std::size_t j = 0; j < 4; ++j) zs += std::exp(z[j]);
  for (std::size_t j = 0; j < 4; ++j) p[j] = std::exp(z[j]) / zs - (j == 2 ? 1.0L : 0.0L);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      EXPECT_NEAR(r.net.params[0].data[i * 4 + j], static_cast<double>(w0.data[i * 4 + j] - 0.1L * ds.images[i] * p[j]),
                  1e-12);
  for (std::size_t j = 0; j < 4; ++j)
    EXPECT_NEAR(r.net.params[1].data[j], static_cast<double>(-0.1L * p[j]), 1e-12);
}

TEST(TrainSgd, MomentumAccumulatesAcrossSteps) {
  // Two identical samples in two batches: second step is lr·(m·g1 + g2).
  Network net = init_weights(build_linear({1, 1, 2}, 2), 3);
  LabeledDataset ds;
  ds.images = Tensor({2, 1, 1, 2}, {1.0, 0.0, 1.0, 0.0});
  ds.labels = {1, 1};
  ds.num_classes = 2;
  TrainConfig one{1, 0.5, 0.0, 1, 0, false};
  const auto after1 = train_sgd(net, slice(ds, 0, 1), one).net;
  const double g1 = (net.params[1].data[0] - after1.params[1].data[0]) / 0.5;
  TrainConfig two{1, 0.5, 0.9, 1, 0, false};
  const auto after2 = train_sgd(net, ds, two).net;
  // bias of class 0 after the first step, then the gradient at that point
  Network mid = after1;
  const auto after_mid = train_sgd(mid, slice(ds, 0, 1), one).net;
  const double g2 = (mid.params[1].data[0] - after_mid.params[1].data[0]) / 0.5;
  EXPECT_NEAR(after2.params[1].data[0], net.params[1].data[0] - 0.5 * g1 - 0.5 * (0.9 * g1 + g2), 1e-12);
}

TEST(TrainSgd, InvalidConfigRejected) {
  const Network net = build_linear({1, 1, 2}, 2);
  LabeledDataset ds;
  ds.images = Tensor({1, 1, 1, 2});
  ds.labels = {0};
  TrainConfig bad;
  bad.momentum = 1.0;
  EXPECT_THROW(train_sgd(net, ds, bad), ConfigError);
  bad = TrainConfig{};
  bad.batch_size = 0;
  EXPECT_THROW(train_sgd(net, ds, bad), ConfigError);
}

TEST(TrainSgd, NonFiniteLossIsDivergenceError) {
  Network net = init_weights(build_linear({1, 1, 2}, 2), 3);
  net.params[0].data[0] = std::numeric_limits<double>::quiet_NaN();
  LabeledDataset ds;
  ds.images = Tensor({1, 1, 1, 2}, {1.0, 1.0});
  ds.labels = {0};
  TrainConfig cfg;
  cfg.batch_size = 1;
  try {
    train_sgd(net, ds, cfg);
    FAIL();
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 0"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("batch 0"), std::string::npos);
  }
}

TEST(TrainSgd, SmallCwnetReachesNinetyFivePercentOnGlyphs) {
  const double acc = accuracy(trained_small().net, glyphs().test);
  RecordProperty("test_accuracy", std::to_string(acc));
  EXPECT_GE(acc, 0.95);
}

TEST(TrainSgdInvariants, FinalEpochLossBelowFirst) {
  const auto& h = trained_small().epoch_loss;
  ASSERT_EQ(h.size(), 10u);
  EXPECT_LT(h.back(), h.front());
}

TEST(TrainSgdInvariants, IdenticalConfigGivesBitIdenticalParameters) {
  SynthOptions o;
  o.per_class = 4;
  const auto ds = preprocess(synth_target_dataset(5, o), PadSpec{3, 32, 32, 28, 28, {}});
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.seed = 17;
  cfg.dropout = true;
  Network net = build_cwnet({3, 32, 32}, 10, 0.25);
  net.input_stats = channel_stats(ds);
  net = init_weights(std::move(net), 2);
  const auto a = train_sgd(net, ds, cfg), b = train_sgd(net, ds, cfg);
  for (std::size_t i = 0; i < net.params.size(); ++i) EXPECT_EQ(a.net.params[i].data, b.net.params[i].data);
  EXPECT_EQ(a.epoch_loss, b.epoch_loss);
}

// --- prediction and accuracy ----------------------------------------------------

TEST(Predict, ArgmaxTieGoesToLowestIndex) {
  EXPECT_EQ(argmax(std::vector<double>(10, 0.0)), 0);
  EXPECT_EQ(argmax(std::vector<double>{1, 3, 3, 2}), 1);
  EXPECT_EQ(argmax(std::vector<double>{0, 0, 0, 9, 0}), 3);
}

TEST(Predict, ZeroNetworkPredictsClassZero) {
  const Network net = build_linear({1, 2, 2}, 5);  // all-zero parameters
  const auto p = predict_batch(net, oracle::random_tensor({3, 1, 2, 2}, 1));
  EXPECT_EQ(p.labels, (std::vector<int>{0, 0, 0}));
}

TEST(Predict, BatchMatchesPerSampleLoop) {
  const Network net = init_weights(build_cwnet({3, 8, 8}, 10, 0.25), 6);
  const Tensor batch = oracle::random_tensor({7, 3, 8, 8}, 77);
  const auto p = predict_batch(net, batch);
  for (std::size_t i = 0; i < 7; ++i) {
    Tensor x({3, 8, 8});
    std::copy_n(batch.data.begin() + static_cast<std::ptrdiff_t>(i * 192), 192, x.data.begin());
    const auto z = logits_of(net, x);
    EXPECT_EQ(p.labels[i], static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin()));
    for (std::size_t j = 0; j < 10; ++j) EXPECT_EQ(p.logits.data[i * 10 + j], z[j]);
  }
}

TEST(Predict, ShapeMismatchIsDimensionError) {
  const Network net = build_linear({1, 2, 2}, 5);
  EXPECT_THROW(predict_batch(net, Tensor({3, 1, 2, 3})), DimensionError);
  EXPECT_THROW(predict_batch(net, Tensor({1, 2, 2})), DimensionError);
}

TEST(Accuracy, ConstantPredictorOnOneClassData) {
  const std::vector<int> pred(20, 4), lab(20, 4);
  EXPECT_EQ(accuracy_of(pred, lab, std::nullopt), 1.0);
}

TEST(Accuracy, UniformRandomPredictorNearTenPercent) {
  Rng rng(2024);
  std::vector<int> pred(1000), lab(1000);
  for (std::size_t i = 0; i < 1000; ++i) {
    pred[i] = static_cast<int>(rng.below(10));
    lab[i] = static_cast<int>(i % 10);
  }
  EXPECT_NEAR(accuracy_of(pred, lab, std::nullopt), 0.1, 0.03);
}

TEST(Accuracy, IdentityMapMatchesDirect) {
  const std::vector<int> pred{0, 1, 2, 2, 9}, lab{0, 1, 1, 2, 3};
  EXPECT_EQ(accuracy_of(pred, lab, ClassMap::identity(10)), accuracy_of(pred, lab, std::nullopt));
  EXPECT_DOUBLE_EQ(accuracy_of(pred, lab, std::nullopt), 0.6);
  // Mapping target k to source k+1.
  EXPECT_DOUBLE_EQ(accuracy_of(std::vector<int>{1, 2}, std::vector<int>{0, 1}, ClassMap({1, 2, 3})), 1.0);
}

TEST(AccuracyInvariants, InUnitIntervalAndOrderFree) {
  const Network net = fresh_small(11);
  SynthOptions o;
  o.per_class = 3;
  const auto ds = preprocess(synth_target_dataset(8, o), PadSpec{3, 32, 32, 28, 28, {}});
  const double a = accuracy(net, ds);
  EXPECT_GE(a, 0.0);
  EXPECT_LE(a, 1.0);
  std::vector<std::size_t> perm(ds.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  std::rotate(perm.begin(), perm.begin() + 7, perm.end());
  EXPECT_EQ(accuracy(net, subset(ds, perm)), a);
}

// --- checkpoints ----------------------------------------------------------------

TEST(Checkpoint, RoundTripIsExact) {
  const auto dir = std::filesystem::temp_directory_path() / "advrep_model_rt";
  std::filesystem::remove_all(dir);
  Network net = fresh_small(21);
  save_network(dir, net, {{"seed", 21}});
  const Network back = load_network(dir);
  EXPECT_EQ(back.layers, net.layers);
  EXPECT_EQ(back.input_shape, net.input_shape);
  EXPECT_EQ(back.input_stats.mean, net.input_stats.mean);
  ASSERT_EQ(back.params.size(), net.params.size());
  for (std::size_t i = 0; i < net.params.size(); ++i) EXPECT_EQ(back.params[i], net.params[i]);
  EXPECT_EQ(load_manifest(dir).at("seed"), 21);
}

TEST(Checkpoint, MissingDirectoryIsIoError) {
  EXPECT_THROW(load_network("/nonexistent/model"), IoError);
}
