#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>

#include "soc/io.hpp"
#include "soc/lipnet.hpp"
#include "soc/oracle.hpp"
#include "test_util.hpp"

namespace soc {
namespace {

using test::Rng;
namespace fs = std::filesystem;

LipNetConfig small_config() {
  LipNetConfig cfg;
  cfg.input_channels = 2;
  cfg.input_size = 4;
  cfg.classes = 3;
  cfg.blocks = {{2, 1}, {4, 2}};
  return cfg;
}

SyntheticConfig small_data(std::size_t samples, std::uint64_t seed) {
  SyntheticConfig s;
  s.samples = samples;
  s.seed = seed;
  return s;
}

TEST(MaxMin, Examples) {
  const Tensor same({2, 1, 1}, {1.5, 1.5});
  EXPECT_EQ(maxmin(same), same);
  EXPECT_EQ(maxmin(Tensor({2, 1, 1}, {1.0, 3.0})), Tensor({2, 1, 1}, {3.0, 1.0}));
  EXPECT_EQ(maxmin(Tensor({2, 1, 1}, {3.0, 1.0})), Tensor({2, 1, 1}, {3.0, 1.0}));
  EXPECT_THROW(maxmin(Tensor::zeros({3, 2, 2})), std::invalid_argument);
}

TEST(MaxMin, PreservesNormAndMultiset) {
  Rng rng(1);
  const Tensor x = Tensor::randn({6, 3, 3}, rng);
  const Tensor y = maxmin(x);
  EXPECT_DOUBLE_EQ(y.norm(), x.norm());
  std::vector<double> a(x.data().begin(), x.data().end()), b(y.data().begin(), y.data().end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  EXPECT_EQ(a, b);
}

TEST(MaxMin, BackwardRoutesAndTies) {
  Rng rng(2);
  const Tensor x = Tensor::randn({4, 2, 2}, rng);
  const Tensor v = Tensor::randn({4, 2, 2}, rng);
  const Tensor fd = test::numeric_gradient([&](const Tensor& u) { return dot(v, maxmin(u)); }, x);
  EXPECT_LE(test::relative_error(maxmin_backward(x, v), fd), 1e-9);
  EXPECT_DOUBLE_EQ(maxmin_backward(x, v).norm(), v.norm());

  const Tensor tie({2, 1, 1}, {2.0, 2.0});
  EXPECT_EQ(maxmin_backward(tie, Tensor({2, 1, 1}, {5.0, 7.0})), Tensor({2, 1, 1}, {5.0, 7.0}));
}

TEST(Certify, Examples) {
  const Certificate c = certify(Tensor({2}, {3.0, 1.0}), 0);
  EXPECT_DOUBLE_EQ(c.margin, 2.0);
  EXPECT_DOUBLE_EQ(c.radius, std::sqrt(2.0));
  EXPECT_TRUE(c.certified_at(1.4));
  EXPECT_FALSE(c.certified_at(1.5));

  const Certificate wrong = certify(Tensor({2}, {3.0, 1.0}), 1);
  EXPECT_FALSE(wrong.correct_prediction());
  EXPECT_EQ(wrong.radius, 0.0);

  const Certificate tie = certify(Tensor({3}, {1.0, 1.0, 0.0}), 1);
  EXPECT_EQ(tie.predicted, 0u);
  EXPECT_EQ(tie.margin, 0.0);
  EXPECT_FALSE(tie.certified_at(0.0));

  const double margin = std::sqrt(2.0) * 36.0 / 255.0;
  EXPECT_NEAR(margin, 0.19966, 1e-5);
  EXPECT_TRUE(certify(Tensor({2}, {margin + 1e-9, 0.0}), 0).certified_at(36.0 / 255.0));
  EXPECT_FALSE(certify(Tensor({2}, {margin - 1e-6, 0.0}), 0).certified_at(36.0 / 255.0));
}

TEST(CrossEntropy, ValueAndGradient) {
  Tensor g;
  EXPECT_NEAR(cross_entropy(Tensor({2}, {0.0, 0.0}), 1, &g), std::log(2.0), 1e-15);
  EXPECT_EQ(g, Tensor({2}, {0.5, -0.5}));
  Rng rng(3);
  const Tensor logits = Tensor::randn({4}, rng);
  cross_entropy(logits, 2, &g);
  const Tensor fd = test::numeric_gradient([](const Tensor& z) { return cross_entropy(z, 2); }, logits);
  EXPECT_LE(test::relative_error(g, fd), 1e-8);
  EXPECT_THROW(cross_entropy(logits, 4), std::invalid_argument);
}

TEST(LipNetConfig, TinyAndJson) {
  const LipNetConfig t = LipNetConfig::tiny();
  ASSERT_EQ(t.blocks.size(), 5u);
  EXPECT_EQ(t.output_size(), 4u);
  EXPECT_EQ(t.feature_count(), 16u * 4u * 4u);
  const LipNetConfig back = LipNetConfig::from_json(t.to_json());
  EXPECT_EQ(back.to_json(), t.to_json());
  LipNetConfig odd = t;
  odd.blocks[0].out_channels = 7;
  EXPECT_THROW(odd.validate(), std::invalid_argument);
}

TEST(LipNet, ForwardIsDeterministicPerSeed) {
  Rng rng(4);
  const LipNet a(small_config(), 9), b(small_config(), 9), c(small_config(), 10);
  const Tensor x = Tensor::randn({2, 4, 4}, rng);
  EXPECT_EQ(a.forward(x, 12), b.forward(x, 12));
  EXPECT_NE(a.forward(x, 12), c.forward(x, 12));
  EXPECT_THROW(a.forward(Tensor::zeros({1, 4, 4}), 12), std::invalid_argument);
}

TEST(LipNet, GradientsMatchFiniteDifferences) {
  Rng rng(5);
  LipNet net(small_config(), 3);
  for (auto& b : net.biases()) b = Tensor::randn(b.dims(), rng, 0.1);
  net.head_bias() = Tensor::randn(net.head_bias().dims(), rng, 0.1);
  const Tensor x = Tensor::randn({2, 4, 4}, rng);
  const std::size_t label = 1;
  const int k = 6;

  LipNetTrace trace;
  Tensor g;
  cross_entropy(net.forward(x, k, &trace), label, &g);
  const LipNetGradients grads = net.backward(trace, g);

  auto loss = [&](const LipNet& n, const Tensor& in) { return cross_entropy(n.forward(in, k), label); };
  EXPECT_LE(test::relative_error(grads.input, test::numeric_gradient([&](const Tensor& u) { return loss(net, u); }, x)),
            1e-6);

  for (std::size_t b = 0; b < net.depth(); ++b) {
    LipNet probe = net;
    const Tensor fd_params = test::numeric_gradient(
        [&](const Tensor& m) {
          probe.layers()[b].set_params(Filter(m));
          return loss(probe, x);
        },
        net.layers()[b].params().tensor());
    EXPECT_LE(test::relative_error(grads.params[b].tensor(), fd_params), 1e-6) << "block " << b;
    probe = net;
    const Tensor fd_bias = test::numeric_gradient(
        [&](const Tensor& v) {
          probe.biases()[b] = v;
          return loss(probe, x);
        },
        net.biases()[b]);
    EXPECT_LE(test::relative_error(grads.biases[b], fd_bias), 1e-6) << "block " << b;
  }

  LipNet probe = net;
  const Tensor fd_head = test::numeric_gradient(
      [&](const Tensor& w) {
        probe.head_weight() = w;
        return loss(probe, x);
      },
      net.head_weight());
  EXPECT_LE(test::relative_error(grads.head_weight, fd_head), 1e-6);
  probe = net;
  const Tensor fd_head_bias = test::numeric_gradient(
      [&](const Tensor& v) {
        probe.head_bias() = v;
        return loss(probe, x);
      },
      net.head_bias());
  EXPECT_LE(test::relative_error(grads.head_bias, fd_head_bias), 1e-8);
}

TEST(LipNet, LipschitzBoundOnPairs) {
  Rng rng(6);
  LipNet net(LipNetConfig::tiny(), 11);
  net.prepare_for_evaluation();
  EXPECT_NEAR(net.head_sigma(), spectral_norm<double>(Eigen::Map<const Matrix<double>>(
                                    net.head_weight().data().data(), 16 * 16, 2)),
              1e-12);
  const double factor = std::pow(1.0 + 10.0 * error_bound(2.1, 12), static_cast<double>(net.depth()));
  std::uniform_real_distribution<double> scale(0.01, 1.0);
  for (int pair = 0; pair < 100; ++pair) {
    const Tensor x = Tensor::randn({1, 8, 8}, rng);
    const Tensor x2 = x + Tensor::randn({1, 8, 8}, rng, scale(rng));
    const double out = (net.forward(x, 12) - net.forward(x2, 12)).norm();
    EXPECT_LE(out, factor * (x - x2).norm()) << "pair " << pair;
  }
}

TEST(LipNet, GradientNormPreservedAtMatchedBlocks) {
  Rng rng(7);
  LipNetConfig cfg;
  cfg.input_channels = 4;
  cfg.input_size = 6;
  cfg.blocks = {{4, 1}, {4, 1}, {4, 1}};
  LipNet net(cfg, 4);
  for (auto& layer : net.layers()) layer.set_params(Filter(Tensor::randn({4, 4, 3, 3}, rng, 0.3)));
  net.prepare_for_evaluation();
  for (int trial = 0; trial < 5; ++trial) {
    LipNetTrace trace;
    const Tensor logits = net.forward(Tensor::randn({4, 6, 6}, rng), 12, &trace);
    const LipNetGradients g = net.backward(trace, Tensor::randn(logits.dims(), rng));
    for (double r : g.block_norm_ratios) EXPECT_NEAR(r, 1.0, 1e-3);
  }
}

TEST(LipNet, CheckpointRoundTrip) {
  Rng rng(8);
  LipNet net(LipNetConfig::tiny(), 12);
  net.biases()[2] = Tensor::randn(net.biases()[2].dims(), rng);
  const fs::path dir = fs::temp_directory_path() / "soc_checkpoint_test";
  fs::remove_all(dir);
  nlohmann::ordered_json extra;
  extra["epoch"] = 3;
  save_checkpoint(net, dir, extra);
  EXPECT_TRUE(fs::exists(dir / "manifest.json"));
  EXPECT_TRUE(fs::exists(dir / "layer0_params.soct"));
  EXPECT_TRUE(fs::exists(dir / "head_weight.soct"));
  nlohmann::json manifest;
  const LipNet back = load_checkpoint(dir, &manifest);
  EXPECT_EQ(manifest["format"], "soc-lipnet");
  EXPECT_EQ(manifest["epoch"], 3);
  const Tensor x = Tensor::randn({1, 8, 8}, rng);
  EXPECT_EQ(back.forward(x, 12), net.forward(x, 12));

  fs::remove(dir / "layer1_bias.soct");
  EXPECT_THROW(load_checkpoint(dir), FormatError);
  fs::remove_all(dir);
  EXPECT_THROW(load_checkpoint(dir), FormatError);
}

// Independent baseline: a logistic regression on raw pixels separates the
// synthetic classes, so the data itself is learnable.
TEST(SyntheticData, LogisticRegressionBaseline) {
  const Dataset d = make_synthetic(small_data(256, 1));
  const std::size_t dim = d.inputs[0].size();
  std::vector<double> w(dim, 0.0);
  double bias = 0.0;
  for (int iter = 0; iter < 200; ++iter) {
    std::vector<double> gw(dim, 0.0);
    double gb = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      double z = bias;
      for (std::size_t p = 0; p < dim; ++p) z += w[p] * d.inputs[i][p];
      const double err = 1.0 / (1.0 + std::exp(-z)) - static_cast<double>(d.labels[i]);
      for (std::size_t p = 0; p < dim; ++p) gw[p] += err * d.inputs[i][p];
      gb += err;
    }
    for (std::size_t p = 0; p < dim; ++p) w[p] -= 0.5 * gw[p] / static_cast<double>(d.size());
    bias -= 0.5 * gb / static_cast<double>(d.size());
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    double z = bias;
    for (std::size_t p = 0; p < dim; ++p) z += w[p] * d.inputs[i][p];
    correct += static_cast<std::size_t>((z > 0.0) == (d.labels[i] == 1));
  }
  EXPECT_GE(static_cast<double>(correct) / static_cast<double>(d.size()), 0.95);
}

TEST(Train, ZeroEpochsLeavesNetUnchanged) {
  LipNet net(LipNetConfig::tiny(), 1);
  const LipNet before = net;
  TrainConfig cfg;
  cfg.epochs = 0;
  EXPECT_TRUE(train(net, make_synthetic(small_data(8, 0)), cfg).history.empty());
  for (std::size_t b = 0; b < net.depth(); ++b) EXPECT_EQ(net.layers()[b].params(), before.layers()[b].params());
  EXPECT_EQ(net.head_weight(), before.head_weight());
  EXPECT_EQ(net.head_right(), before.head_right());
}

TEST(Train, RejectsBadInputs) {
  LipNet net(LipNetConfig::tiny(), 1);
  EXPECT_THROW(train(net, Dataset{}, TrainConfig{}), std::invalid_argument);
  Dataset three = make_synthetic(small_data(8, 0));
  three.classes = 3;
  EXPECT_THROW(train(net, three, TrainConfig{}), std::invalid_argument);
  net.biases()[0][0] = std::nan("");
  TrainConfig one;
  one.epochs = 1;
  EXPECT_THROW(train(net, make_synthetic(small_data(8, 0)), one), NumericalError);
}

TEST(Train, ShortRunLearnsAndFollowsSchedule) {
  LipNet net(LipNetConfig::tiny(), 2);
  TrainConfig cfg;
  cfg.epochs = 8;
  cfg.seed = 3;
  cfg.evaluate_every = 4;
  const Dataset data = make_synthetic(small_data(128, 4));
  std::vector<int> seen;
  const TrainResult r = train(net, data, cfg, [&](const EpochMetrics& m) { seen.push_back(m.epoch); });
  ASSERT_EQ(r.history.size(), 8u);
  EXPECT_EQ(seen, (std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7}));
  const double expected_lr[] = {0.1, 0.1, 0.01, 0.01, 0.01, 0.01, 0.001, 0.001};
  for (std::size_t e = 0; e < 8; ++e) EXPECT_NEAR(r.history[e].lr, expected_lr[e], 1e-15) << "epoch " << e;
  EXPECT_FALSE(r.history[0].evaluated);
  EXPECT_TRUE(r.history[3].evaluated);
  EXPECT_TRUE(r.history.back().evaluated);
  EXPECT_GE(r.history.back().accuracy, 0.9);
  const EvalResult ev = evaluate(net, data, 0.0, 12);
  EXPECT_DOUBLE_EQ(ev.accuracy, r.history.back().accuracy);
}

TEST(TrainConfig, JsonRoundTrip) {
  TrainConfig cfg;
  cfg.epochs = 7;
  cfg.lr_drop_epochs = {2, 5};
  cfg.seed = 99;
  EXPECT_EQ(TrainConfig::from_json(cfg.to_json()).to_json(), cfg.to_json());
}

TEST(Pgd, LargeBallFlipsPrediction) {
  Rng rng(9);
  LipNet net(LipNetConfig::tiny(), 5);
  net.prepare_for_evaluation();
  const Tensor x = Tensor::randn({1, 8, 8}, rng);
  const std::size_t t = certify(net.forward(x, 12), 0).predicted;
  AttackConfig cfg;
  cfg.restarts = 3;
  cfg.steps = 20;
  const AttackResult big = pgd_search(net, x, t, 20.0 * x.norm(), cfg);
  EXPECT_TRUE(big.violated);
  EXPECT_GT(big.best_gap, 0.0);
  EXPECT_LE((big.adversarial - x).norm(), 20.0 * x.norm() * (1.0 + 1e-12));
}

TEST(Pgd, CannotBreakCertificate) {
  Rng rng(10);
  LipNet net(LipNetConfig::tiny(), 6);
  net.prepare_for_evaluation();
  const Tensor x = Tensor::randn({1, 8, 8}, rng);
  const Certificate c = certify(net.forward(x, 12), 0);
  const std::size_t t = c.predicted;
  const double radius = certify(net.forward(x, 12), t).radius;
  AttackConfig cfg;
  cfg.restarts = 5;
  const AttackResult r = pgd_search(net, x, t, 0.99 * radius, cfg);
  EXPECT_FALSE(r.violated);
  EXPECT_LT(r.best_gap, 0.0);
  EXPECT_THROW(pgd_search(net, x, 5, 0.1, cfg), std::invalid_argument);
}

}  // namespace
}  // namespace soc
