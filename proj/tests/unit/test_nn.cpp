#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "expertnet/gradcheck.hpp"
#include "expertnet/nn.hpp"

using namespace expertnet;
using namespace expertnet::nn;

namespace {

Network single_dense(Tensor w, Tensor b, std::vector<Layer> tail = {}) {
  const std::size_t in = w.cols();
  std::vector<Layer> layers{Dense{std::move(w), std::move(b)}};
  for (auto& l : tail) layers.push_back(std::move(l));
  return Network(in, std::move(layers));
}

}  // namespace

TEST(Softmax, UniformForEqualLogits) {
  const auto p = softmax(std::vector<double>{0, 0, 0});
  for (double v : p) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, LnTwoLogit) {
  const auto p = softmax(std::vector<double>{std::log(2.0), 0, 0});
  EXPECT_NEAR(p[0], 0.5, 1e-15);
  EXPECT_NEAR(p[1], 0.25, 1e-15);
  EXPECT_NEAR(p[2], 0.25, 1e-15);
}

TEST(Softmax, MatchesHighPrecisionOracle) {
  // 60-digit direct evaluation of exp(z_k) / sum exp(z_j).
  const double expected[] = {9.141568690309075742275288e-05, 2.04503947578370856741409e-06,
                             0.9999065392736211255340098};
  const auto p = softmax(std::vector<double>{3.1, -0.7, 12.4});
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(p[k] / expected[k], 1.0, 1e-12) << k;
}

TEST(Softmax, RejectsEmptyAndNonFinite) {
  EXPECT_THROW(softmax(std::vector<double>{}), DimensionError);
  EXPECT_THROW(softmax(std::vector<double>{1.0, NAN}), NumericError);
  EXPECT_THROW(softmax(std::vector<double>{INFINITY, 0.0}), NumericError);
}

TEST(Softmax, SurvivesHugeLogits) {
  const auto p = softmax(std::vector<double>{1000.0, 999.0, -1000.0});
  EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-12);
  EXPECT_GT(p[0], p[1]);
}

TEST(CrossEntropy, PerfectMatchIsZero) {
  EXPECT_NEAR(cross_entropy(std::vector<double>{0, 0, 1}, std::vector<double>{0, 0, 1}), 0.0, 1e-12);
}

TEST(CrossEntropy, UniformPredictionOverTen) {
  std::vector<double> t(10, 0.0), p(10, 0.1);
  t[4] = 1.0;
  EXPECT_NEAR(cross_entropy(t, p), 2.302585092994045684017991, 1e-12);
}

TEST(CrossEntropy, SoftTargetMatchesHighPrecisionOracle) {
  const double oracle = 0.8369882167858357731368416;
  EXPECT_NEAR(cross_entropy(std::vector<double>{0.5, 0.5}, std::vector<double>{0.25, 0.75}), oracle,
              1e-12);
}

TEST(CrossEntropy, ClampsZeroPrediction) {
  const double v = cross_entropy(std::vector<double>{1, 0}, std::vector<double>{0, 1});
  EXPECT_NEAR(v, -std::log(kLogClamp), 1e-9);
}

TEST(CrossEntropy, LengthMismatchIsDimensionError) {
  EXPECT_THROW(cross_entropy(std::vector<double>{1, 0}, std::vector<double>{1}), DimensionError);
}

TEST(Network, RejectsInconsistentLayers) {
  std::vector<Layer> bad{Dense{Tensor::matrix(3, 2), Tensor({3})}, Dense{Tensor::matrix(2, 4), Tensor({2})}};
  EXPECT_THROW(Network(2, bad), DimensionError);
  std::vector<Layer> bias{Dense{Tensor::matrix(3, 2), Tensor({2})}};
  EXPECT_THROW(Network(2, bias), DimensionError);
  std::vector<Layer> slope{Dense{Tensor::matrix(3, 2), Tensor({3})}, Activation{ActivationKind::leaky_relu, 1.5}};
  EXPECT_THROW(Network(2, slope), ConfigError);
}

TEST(Forward, IdentityLayer) {
  auto net = single_dense(Tensor::from_rows({{1, 0}, {0, 1}}), Tensor({2}));
  const auto out = forward(net, Tensor::from_rows({{1, 2}}));
  EXPECT_EQ(out, Tensor::from_rows({{1, 2}}));
}

TEST(Forward, DenseThenRelu) {
  auto net = single_dense(Tensor::from_rows({{1, 1}, {1, -1}}), Tensor({2}), {Activation{ActivationKind::relu}});
  EXPECT_EQ(forward(net, Tensor::from_rows({{2, 3}})), Tensor::from_rows({{5, 0}}));
}

TEST(Forward, WidthMismatchIsDimensionError) {
  auto net = single_dense(Tensor::from_rows({{1, 0}, {0, 1}}), Tensor({2}));
  EXPECT_THROW(forward(net, Tensor::matrix(1, 3)), DimensionError);
}

TEST(Forward, MatchesScalarReevaluation) {
  Rng rng(7);
  Dense first = glorot_dense(3, 4, rng);
  Dense second = glorot_dense(4, 2, rng);
  for (double& b : first.bias.values()) b = rng.uniform(-1, 1);
  for (double& b : second.bias.values()) b = rng.uniform(-1, 1);
  Network net(3, {first, Activation{ActivationKind::leaky_relu, 0.1}, second,
                  Activation{ActivationKind::softmax}});
  Tensor x = Tensor::matrix(5, 3);
  for (double& v : x.values()) v = rng.normal();
  const Tensor out = forward(net, x);

  const auto& d1 = std::get<Dense>(net.layers()[0]);
  const auto& d2 = std::get<Dense>(net.layers()[2]);
  for (std::size_t b = 0; b < 5; ++b) {
    double h[4];
    for (int o = 0; o < 4; ++o) {
      double z = d1.bias[o];
      for (int i = 0; i < 3; ++i) z += d1.weight(o, i) * x(b, i);
      h[o] = z > 0 ? z : 0.1 * z;
    }
    double z[2];
    for (int o = 0; o < 2; ++o) {
      z[o] = d2.bias[o];
      for (int i = 0; i < 4; ++i) z[o] += d2.weight(o, i) * h[i];
    }
    const double m = std::max(z[0], z[1]);
    const double e0 = std::exp(z[0] - m), e1 = std::exp(z[1] - m);
    EXPECT_NEAR(out(b, 0), e0 / (e0 + e1), 1e-10);
    EXPECT_NEAR(out(b, 1), e1 / (e0 + e1), 1e-10);
  }
}

TEST(Forward, SigmoidNormalizeRowsAreDistributions) {
  Rng rng(3);
  auto net = make_mlp(4, {5}, 3, Activation{ActivationKind::relu}, Terminal::sigmoid_normalized, rng);
  EXPECT_TRUE(net.is_classifier());
  Tensor x = Tensor::matrix(6, 4);
  for (double& v : x.values()) v = rng.normal();
  const Tensor out = forward(net, x);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    const auto row = out.row(r);
    EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0), 1.0, 1e-12);
    for (double v : row) EXPECT_GT(v, 0.0);
  }
}

TEST(Gradients, ZeroWeightSoftmaxWithUniformTargetsIsStationary) {
  auto net = single_dense(Tensor::matrix(3, 4), Tensor({3}), {Activation{ActivationKind::softmax}});
  Tensor x = Tensor::from_rows({{1, -2, 0.5, 3}, {0.1, 0.2, -0.3, 4}});
  Tensor t = Tensor::matrix(2, 3, 1.0 / 3.0);
  for (const auto& g : gradients(net, x, t, Loss::cross_entropy())) {
    for (double v : g.values()) EXPECT_NEAR(v, 0.0, 1e-15);
  }
}

TEST(Gradients, SoftmaxCrossEntropyLogitGradientIsPredictionMinusTarget) {
  // With identity weights and zero bias the weight gradient row o equals
  // sum_b (p_bo - t_bo) / B * x_b and the bias gradient sum_b (p_bo - t_bo) / B.
  auto net = single_dense(Tensor::from_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}), Tensor({3}),
                          {Activation{ActivationKind::softmax}});
  Tensor x = Tensor::from_rows({{0.3, -1.0, 2.0}, {1.5, 0.2, -0.4}});
  Tensor t = Tensor::from_rows({{0, 1, 0}, {0.2, 0.3, 0.5}});
  const auto eval = evaluate(net, x, t, Loss::cross_entropy());
  for (int o = 0; o < 3; ++o) {
    double expected = 0.0;
    for (int b = 0; b < 2; ++b) expected += (eval.output(b, o) - t(b, o)) / 2.0;
    EXPECT_NEAR(eval.gradients[1][o], expected, 1e-14);
  }
  const auto trial = gradcheck::check_case(net, x, t, Loss::cross_entropy());
  EXPECT_TRUE(trial.passed) << trial.max_relative_error;
}

TEST(Gradients, UnknownLossKindIsConfigError) {
  auto net = single_dense(Tensor::matrix(2, 2), Tensor({2}), {Activation{ActivationKind::softmax}});
  Loss bogus;
  bogus.kind = static_cast<LossKind>(42);
  EXPECT_THROW(gradients(net, Tensor::matrix(1, 2), Tensor::from_rows({{1, 0}}), bogus), ConfigError);
}

TEST(Gradients, ForwardLossWithIdentityEqualsCrossEntropy) {
  Rng rng(11);
  auto net = make_mlp(3, {4}, 3, Activation{ActivationKind::relu}, Terminal::softmax, rng);
  Tensor x = Tensor::matrix(4, 3);
  for (double& v : x.values()) v = rng.normal();
  Tensor t = Tensor::from_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 0, 0}});
  Tensor eye = Tensor::from_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  const auto a = evaluate(net, x, t, Loss::cross_entropy());
  const auto b = evaluate(net, x, t, Loss::forward_corrected(eye));
  EXPECT_EQ(a.loss, b.loss);
  for (std::size_t i = 0; i < a.gradients.size(); ++i) EXPECT_EQ(a.gradients[i], b.gradients[i]);
}

TEST(Gradients, RandomizedFiniteDifferenceSuite) {
  const auto report = gradcheck::run({});
  EXPECT_GE(report.trials.size(), 100u);
  EXPECT_TRUE(report.passed()) << "max relative error " << report.max_relative_error;
  for (const char* kind : {"dense", "relu", "leaky_relu", "sigmoid", "softmax", "normalize",
                           "cross-entropy", "forward-corrected"}) {
    EXPECT_NE(std::find(report.kinds_covered.begin(), report.kinds_covered.end(), kind),
              report.kinds_covered.end())
        << kind;
  }
}

TEST(Sgd, PlainStep) {
  auto net = single_dense(Tensor::from_rows({{1.0}}), Tensor({1}));
  auto state = OptimizerState::for_network(net, 0.0, 0.0, {});
  std::vector<Tensor> g{Tensor::from_rows({{0.5}}), Tensor({1})};
  sgd_step(net, g, state, 0.1);
  EXPECT_DOUBLE_EQ(std::get<Dense>(net.layers()[0]).weight[0], 0.95);
  EXPECT_EQ(net.version(), 1u);
}

TEST(Sgd, ZeroGradientIsFixedPoint) {
  auto net = single_dense(Tensor::from_rows({{1.0, -2.0}}), Tensor::vector({0.5}));
  const Network before = net;
  auto state = OptimizerState::for_network(net, 0.9, 0.0, {});
  std::vector<Tensor> g{Tensor::matrix(1, 2), Tensor({1})};
  for (int i = 0; i < 5; ++i) sgd_step(net, g, state, 0.1);
  EXPECT_TRUE(same_parameters(net, before));
}

TEST(Sgd, MomentumTwoStepRecurrence) {
  const double lr = 0.05, g = 0.8;
  auto net = single_dense(Tensor::from_rows({{2.0}}), Tensor({1}));
  auto state = OptimizerState::for_network(net, 0.9, 0.0, {});
  std::vector<Tensor> grads{Tensor::from_rows({{g}}), Tensor({1})};
  sgd_step(net, grads, state, lr);
  const double p1 = std::get<Dense>(net.layers()[0]).weight[0];
  sgd_step(net, grads, state, lr);
  const double p2 = std::get<Dense>(net.layers()[0]).weight[0];
  EXPECT_NEAR(2.0 - p1, lr * g, 1e-15);
  EXPECT_NEAR(p1 - p2, lr * 1.9 * g, 1e-15);
}

TEST(Sgd, NegativeLearningRateIsConfigError) {
  auto net = single_dense(Tensor::from_rows({{1.0}}), Tensor({1}));
  auto state = OptimizerState::for_network(net, 0.9, 0.0, {});
  std::vector<Tensor> g{Tensor::from_rows({{1.0}}), Tensor({1})};
  EXPECT_THROW(sgd_step(net, g, state, -0.1), ConfigError);
}

TEST(Sgd, ZeroLearningRateLeavesEverythingUntouched) {
  auto net = single_dense(Tensor::from_rows({{1.0}}), Tensor({1}));
  auto state = OptimizerState::for_network(net, 0.9, 0.1, {});
  const auto state_before = state;
  std::vector<Tensor> g{Tensor::from_rows({{1.0}}), Tensor({1})};
  sgd_step(net, g, state, 0.0);
  EXPECT_EQ(state, state_before);
  EXPECT_EQ(net.version(), 0u);
}

TEST(Schedule, StepDecay) {
  EXPECT_DOUBLE_EQ(lr_at({0.01, 0.1, 40}, 0), 0.01);
  EXPECT_NEAR(lr_at({0.002, 0.1, 5}, 5), 0.0002, 1e-18);
  EXPECT_DOUBLE_EQ(lr_at({0.01, 0.1, 40}, 39), 0.01);
  EXPECT_NEAR(lr_at({0.01, 0.1, 40}, 80), 0.0001, 1e-18);
  EXPECT_DOUBLE_EQ(lr_at({0.01, 0.1, 0}, 1000), 0.01);
}

TEST(Init, GlorotBoundsAndZeroBias) {
  Rng rng(5);
  const auto d = glorot_dense(30, 20, rng);
  const double limit = std::sqrt(6.0 / 50.0);
  for (double w : d.weight.values()) EXPECT_LE(std::abs(w), limit);
  for (double b : d.bias.values()) EXPECT_EQ(b, 0.0);
}
