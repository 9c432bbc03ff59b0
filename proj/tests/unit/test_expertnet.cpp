#include <gtest/gtest.h>

#include <cmath>

#include "expertnet/expertnet.hpp"

using namespace expertnet;
using nn::Activation;
using nn::ActivationKind;
using nn::Dense;

namespace {

/// Expert whose output is softmax(gain * label half of z): effectively
/// onehot(given label) for large gain.
nn::Network copy_expert(std::size_t k, double gain = 60.0) {
  Tensor w = Tensor::matrix(k, 2 * k);
  for (std::size_t i = 0; i < k; ++i) w(i, k + i) = gain;
  return nn::Network(2 * k, {Dense{w, Tensor({k})}, Activation{ActivationKind::softmax}});
}

ExpertNetModel model_with(nn::Network amateur, nn::Network expert, double momentum = 0.0,
                          double wd = 0.0) {
  auto a_opt = nn::OptimizerState::for_network(amateur, momentum, wd, {});
  auto e_opt = nn::OptimizerState::for_network(expert, momentum, wd, {});
  ExpertNetModel m{std::move(amateur), std::move(expert), std::move(a_opt), std::move(e_opt)};
  m.validate();
  return m;
}

/// K = 2, three features, single dense layer per network.
ExpertNetModel tiny_model() {
  nn::Network amateur(3, {Dense{Tensor::from_rows({{0.2, -0.1, 0.4}, {-0.3, 0.5, 0.1}}), Tensor::vector({0.05, -0.02})},
                          Activation{ActivationKind::softmax}});
  nn::Network expert(4, {Dense{Tensor::from_rows({{0.3, -0.2, 0.7, -0.4}, {-0.1, 0.4, -0.6, 0.5}}),
                               Tensor::vector({0.01, 0.02})},
                         Activation{ActivationKind::softmax}});
  return model_with(std::move(amateur), std::move(expert));
}

Batch tiny_batch() {
  return {Tensor::from_rows({{1.0, -0.5, 2.0}, {0.3, 0.8, -1.2}}), {1, 0}, {0, 0}};
}

double loss_of(const nn::Network& net, const Tensor& x, const Tensor& t) {
  return nn::loss_value(nn::Loss::cross_entropy(), nn::forward(net, x), t);
}

/// Central-difference gradient of the mean CE of `net` on (x, t), parameter order.
std::vector<Tensor> fd_gradients(nn::Network net, const Tensor& x, const Tensor& t) {
  std::vector<Tensor> out;
  for (Tensor* p : net.parameters()) {
    Tensor g(p->shape());
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double saved = (*p)[i];
      (*p)[i] = saved + 1e-6;
      const double up = loss_of(net, x, t);
      (*p)[i] = saved - 1e-6;
      const double down = loss_of(net, x, t);
      (*p)[i] = saved;
      g[i] = (up - down) / 2e-6;
    }
    out.push_back(std::move(g));
  }
  return out;
}

void plain_step(nn::Network& net, const std::vector<Tensor>& g, double lr) {
  auto params = net.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (std::size_t j = 0; j < params[i]->size(); ++j) (*params[i])[j] -= lr * g[i][j];
  }
}

}  // namespace

TEST(ExpertInput, Layout) {
  EXPECT_EQ(expert_input(std::vector<double>{0.5, 0.5}, 1), (std::vector<double>{0.5, 0.5, 0, 1}));
  EXPECT_EQ(expert_input(std::vector<double>{1, 0, 0}, 0), (std::vector<double>{1, 0, 0, 1, 0, 0}));
}

TEST(ExpertInput, RoundTrip) {
  Rng rng(1);
  for (int c = 0; c < 100; ++c) {
    const std::size_t k = 2 + rng.below(8);
    std::vector<double> logits(k);
    for (double& v : logits) v = rng.normal();
    const auto p = nn::softmax(logits);
    const std::size_t y = rng.below(k);
    const auto z = expert_input(p, y);
    ASSERT_EQ(z.size(), 2 * k);
    EXPECT_TRUE(std::equal(p.begin(), p.end(), z.begin()));
    EXPECT_EQ(argmax(std::span<const double>(z).subspan(k)), y);
    EXPECT_EQ(std::accumulate(z.begin() + k, z.end(), 0.0), 1.0);
  }
}

TEST(ExpertInput, RejectsInvalidDistribution) {
  EXPECT_THROW(expert_input(std::vector<double>{0.5, 0.6}, 0), DataError);
  EXPECT_THROW(expert_input(std::vector<double>{1.2, -0.2}, 0), DataError);
  EXPECT_THROW(expert_input(std::vector<double>{0.5, 0.5}, 2), DataError);
}

TEST(Model, CreateBuildsDocumentedShapes) {
  const auto m = ExpertNetModel::create(16, 4, {}, {}, 1);
  EXPECT_EQ(m.amateur.input_dim(), 16u);
  EXPECT_EQ(m.amateur.output_dim(), 4u);
  EXPECT_EQ(m.expert.input_dim(), 8u);
  EXPECT_EQ(m.expert.output_dim(), 4u);
  EXPECT_EQ(m.amateur.layers().size(), 6u);  // 16-128-64-4 with relu, relu, softmax
  EXPECT_EQ(m.expert.layers().size(), 6u);   // 8-64-32-4 with leaky, leaky, softmax
  const auto& act = std::get<Activation>(m.expert.layers()[1]);
  EXPECT_EQ(act.kind, ActivationKind::leaky_relu);
  EXPECT_EQ(act.slope, 0.01);
  Architecture sig;
  sig.expert_terminal = ExpertTerminal::sigmoid;
  const auto s = ExpertNetModel::create(16, 4, sig, {}, 1);
  EXPECT_EQ(std::get<Activation>(s.expert.layers().back()).kind, ActivationKind::normalize);
}

TEST(TrainStep, PhaseOrderVersionsAndTargets) {
  auto model = ExpertNetModel::create(3, 2, {{5}, {4}, ExpertTerminal::softmax, 0.01}, {0.9, 1e-4}, 7);
  const Batch batch = tiny_batch();
  const auto amateur0 = model.amateur;
  const auto expert0 = model.expert;
  std::vector<StepPhase> phases;
  nn::Network expert_after_update;
  Tensor z_seen, pe_seen;
  train_step(model, batch, 0.1, [&](const StepEvent& e) {
    phases.push_back(e.phase);
    switch (e.phase) {
      case StepPhase::amateur_predicted:
        EXPECT_EQ(*e.data, nn::forward(amateur0, batch.x));
        EXPECT_EQ(e.model.amateur.version(), 0u);
        EXPECT_EQ(e.model.expert.version(), 0u);
        break;
      case StepPhase::expert_input_built:
        z_seen = *e.data;
        EXPECT_EQ(z_seen, expert_inputs(nn::forward(amateur0, batch.x), batch.given));
        break;
      case StepPhase::expert_updated:
        // Expert moved; Amateur untouched by the Expert update.
        EXPECT_EQ(e.model.expert.version(), 1u);
        EXPECT_FALSE(same_parameters(e.model.expert, expert0));
        EXPECT_EQ(e.model.amateur.version(), 0u);
        EXPECT_TRUE(same_parameters(e.model.amateur, amateur0));
        // Expert target is onehot(t), not the given labels.
        EXPECT_EQ(*e.target, data::one_hot_rows(batch.truth, 2));
        EXPECT_NE(*e.target, data::one_hot_rows(batch.given, 2));
        expert_after_update = e.model.expert;
        break;
      case StepPhase::expert_predicted:
        // pE comes from the updated Expert.
        pe_seen = *e.data;
        EXPECT_EQ(pe_seen, nn::forward(expert_after_update, z_seen));
        EXPECT_NE(pe_seen, nn::forward(expert0, z_seen));
        EXPECT_EQ(e.model.amateur.version(), 0u);
        break;
      case StepPhase::amateur_updated:
        EXPECT_EQ(e.model.amateur.version(), 1u);
        EXPECT_EQ(e.model.expert.version(), 1u);
        EXPECT_TRUE(same_parameters(e.model.expert, expert_after_update));
        // Amateur target is the Expert's soft output, not onehot(t).
        EXPECT_EQ(*e.target, pe_seen);
        EXPECT_NE(*e.target, data::one_hot_rows(batch.truth, 2));
        break;
    }
  });
  EXPECT_EQ(phases, (std::vector<StepPhase>{StepPhase::amateur_predicted, StepPhase::expert_input_built,
                                            StepPhase::expert_updated, StepPhase::expert_predicted,
                                            StepPhase::amateur_updated}));
}

TEST(TrainStep, ReplayOracleHandSetWeights) {
  auto model = tiny_model();
  const Batch batch = tiny_batch();
  const double lr = 0.1;

  // Independent replay of the five steps with finite-difference gradients.
  nn::Network amateur = model.amateur;
  nn::Network expert = model.expert;
  const Tensor pa = nn::forward(amateur, batch.x);
  Tensor z = Tensor::matrix(2, 4);
  for (std::size_t r = 0; r < 2; ++r) {
    z(r, 0) = pa(r, 0);
    z(r, 1) = pa(r, 1);
    z(r, 2 + batch.given[r]) = 1.0;
  }
  const Tensor t = data::one_hot_rows(batch.truth, 2);
  const double expert_loss = loss_of(expert, z, t);
  plain_step(expert, fd_gradients(expert, z, t), lr);
  const Tensor pe = nn::forward(expert, z);
  const double amateur_loss = loss_of(amateur, batch.x, pe);
  plain_step(amateur, fd_gradients(amateur, batch.x, pe), lr);

  const auto losses = train_step(model, batch, lr);
  EXPECT_NEAR(losses.expert, expert_loss, 1e-12);
  // pE inherits the finite-difference error of the Expert update.
  EXPECT_NEAR(losses.amateur, amateur_loss, 1e-9);
  const auto got_a = model.amateur.parameters();
  const auto want_a = amateur.parameters();
  for (std::size_t i = 0; i < got_a.size(); ++i) {
    for (std::size_t j = 0; j < got_a[i]->size(); ++j) EXPECT_NEAR((*got_a[i])[j], (*want_a[i])[j], 1e-8);
  }
  const auto got_e = model.expert.parameters();
  const auto want_e = expert.parameters();
  for (std::size_t i = 0; i < got_e.size(); ++i) {
    for (std::size_t j = 0; j < got_e[i]->size(); ++j) EXPECT_NEAR((*got_e[i])[j], (*want_e[i])[j], 1e-8);
  }
}

TEST(TrainStep, ZeroLearningRateIsFixedPoint) {
  auto model = ExpertNetModel::create(3, 2, {{5}, {4}, ExpertTerminal::softmax, 0.01}, {}, 3);
  const auto before = model;
  const auto losses = train_step(model, tiny_batch(), 0.0);
  EXPECT_TRUE(same_parameters(model.amateur, before.amateur));
  EXPECT_TRUE(same_parameters(model.expert, before.expert));
  EXPECT_EQ(model.amateur_opt, before.amateur_opt);
  EXPECT_EQ(model.expert_opt, before.expert_opt);
  EXPECT_GT(losses.amateur, 0.0);
  EXPECT_GT(losses.expert, 0.0);
}

TEST(TrainStep, CopyExpertMakesGivenLabelTheAmateurTarget) {
  Rng rng(5);
  auto amateur = nn::make_mlp(3, {}, 3, Activation{ActivationKind::relu}, nn::Terminal::softmax, rng);
  auto model = model_with(std::move(amateur), copy_expert(3));
  // t == y so the copy Expert is already optimal and barely moves.
  const Batch batch{Tensor::from_rows({{1, 0, 2}, {-1, 1, 0}, {0.5, 0.5, -0.5}}), {2, 0, 1}, {2, 0, 1}};
  const Tensor y = data::one_hot_rows(batch.given, 3);
  const double before = loss_of(model.amateur, batch.x, y);
  train_step(model, batch, 0.05, [&](const StepEvent& e) {
    if (e.phase == StepPhase::amateur_updated) {
      for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR((*e.target)[i], y[i], 1e-20 + 1e-12);
    }
  });
  EXPECT_LT(loss_of(model.amateur, batch.x, y), before);
}

TEST(TrainStep, DimensionMismatchIsDataError) {
  auto model = tiny_model();
  EXPECT_THROW(train_step(model, {Tensor::matrix(1, 4), {0}, {0}}, 0.1), DataError);
  EXPECT_THROW(train_step(model, {Tensor::matrix(2, 3), {0}, {0, 1}}, 0.1), DataError);
}

TEST(Inference, TiesGoToLowestClass) {
  // Zero weights: Amateur outputs [0.5, 0.5] for every input.
  nn::Network amateur(3, {Dense{Tensor::matrix(2, 3), Tensor({2})}, Activation{ActivationKind::softmax}});
  const auto model = model_with(std::move(amateur), copy_expert(2));
  EXPECT_EQ(infer_amateur(model, std::vector<double>{1, 2, 3}), 0u);
}

TEST(Inference, AmateurMatchesArgmaxScan) {
  const auto model = ExpertNetModel::create(5, 4, {{8}, {6}, ExpertTerminal::softmax, 0.01}, {}, 9);
  Rng rng(2);
  Tensor x = Tensor::matrix(100, 5);
  for (double& v : x.values()) v = rng.normal() * 3;
  const auto pred = infer_amateur(model, x);
  const Tensor p = nn::forward(model.amateur, x);
  for (std::size_t r = 0; r < 100; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < 4; ++c) {
      if (p(r, c) > p(r, best)) best = c;
    }
    EXPECT_EQ(pred[r], best);
  }
}

TEST(Inference, CopyExpertReturnsGivenLabel) {
  Rng rng(4);
  auto amateur = nn::make_mlp(2, {3}, 3, Activation{ActivationKind::relu}, nn::Terminal::softmax, rng);
  const auto model = model_with(std::move(amateur), copy_expert(3));
  for (std::size_t y = 0; y < 3; ++y) {
    EXPECT_EQ(infer_full(model, std::vector<double>{rng.normal(), rng.normal()}, y), y);
  }
}

TEST(Inference, FullModeForwardReplay) {
  const auto model = tiny_model();
  const std::vector<double> x{0.4, -1.0, 0.7};
  const std::size_t y = 1;
  // Hand replay: Amateur softmax, concat, Expert softmax.
  const auto& da = std::get<Dense>(model.amateur.layers()[0]);
  std::vector<double> za(2);
  for (int o = 0; o < 2; ++o) {
    za[o] = da.bias[o];
    for (int i = 0; i < 3; ++i) za[o] += da.weight(o, i) * x[i];
  }
  const double ea0 = std::exp(za[0]), ea1 = std::exp(za[1]);
  const double z[4] = {ea0 / (ea0 + ea1), ea1 / (ea0 + ea1), 0.0, 1.0};
  const auto& de = std::get<Dense>(model.expert.layers()[0]);
  double ze[2];
  for (int o = 0; o < 2; ++o) {
    ze[o] = de.bias[o];
    for (int i = 0; i < 4; ++i) ze[o] += de.weight(o, i) * z[i];
  }
  const double pe1 = std::exp(ze[1]) / (std::exp(ze[0]) + std::exp(ze[1]));
  const Tensor probs = full_probabilities(model, Tensor::from_rows({x}), {y});
  EXPECT_NEAR(probs(0, 1), pe1, 1e-12);
  EXPECT_EQ(infer_full(model, x, y), pe1 > 0.5 ? 1u : 0u);
  EXPECT_EQ(infer_full(model, x, y), infer_full(model, x, y));
}

TEST(Train, OneBatchPerEpochAndHistoryLength) {
  const auto ds = data::make_blobs({2, 10, 3, 4, 1}, 1).with_noise(noise::symmetric_matrix(2, 0.1), 2);
  auto model = ExpertNetModel::create(3, 2, {{4}, {4}, ExpertTerminal::softmax, 0.01}, {}, 1);
  std::size_t batches = 0;
  TrainObserver obs;
  obs.on_batch = [&](std::size_t, std::span<const std::size_t> idx) {
    ++batches;
    EXPECT_EQ(idx.size(), 20u);
  };
  const auto h = train(model, ds, ds, {3, 20, {0.01, 0.1, 0}}, 5, &obs);
  EXPECT_EQ(batches, 3u);
  ASSERT_EQ(h.epochs.size(), 3u);
  for (const auto& r : h.epochs) {
    EXPECT_GE(r.amateur_loss, 0.0);
    ASSERT_TRUE(r.expert_loss);
    EXPECT_GE(*r.expert_loss, 0.0);
    ASSERT_TRUE(r.val_full_accuracy);
  }
}

TEST(Train, PartialFinalBatchKept) {
  const auto ds = data::make_blobs({2, 10, 3, 4, 1}, 1).with_noise(noise::symmetric_matrix(2, 0.0), 2);
  auto model = ExpertNetModel::create(3, 2, {{4}, {4}, ExpertTerminal::softmax, 0.01}, {}, 1);
  std::vector<std::size_t> sizes;
  TrainObserver obs;
  obs.on_batch = [&](std::size_t, std::span<const std::size_t> idx) { sizes.push_back(idx.size()); };
  train(model, ds, ds, {1, 8, {0.01, 0.1, 0}}, 5, &obs);
  EXPECT_EQ(sizes, (std::vector<std::size_t>{8, 8, 4}));
}

TEST(Train, EmptyOrInvalidInputsAreConfigErrors) {
  const auto ds = data::make_blobs({2, 10, 3, 4, 1}, 1).with_noise(noise::symmetric_matrix(2, 0.0), 2);
  auto model = ExpertNetModel::create(3, 2, {{4}, {4}, ExpertTerminal::softmax, 0.01}, {}, 1);
  EXPECT_THROW(train(model, ds, ds, {0, 8, {}}, 1), ConfigError);
  EXPECT_THROW(train(model, data::make_blobs({2, 10, 3, 4, 1}, 1), ds, {1, 8, {}}, 1), ConfigError);
}

TEST(Train, DeterministicPerSeed) {
  const auto ds = data::make_blobs({3, 30, 4, 4, 1}, 1).with_noise(noise::symmetric_matrix(3, 0.2), 2);
  auto run = [&] {
    auto model = ExpertNetModel::create(4, 3, {{6}, {5}, ExpertTerminal::softmax, 0.01}, {}, 8);
    train(model, ds, ds, {4, 16, {0.05, 0.1, 2}}, 3);
    return model;
  };
  const auto a = run();
  const auto b = run();
  EXPECT_TRUE(same_parameters(a.amateur, b.amateur));
  EXPECT_TRUE(same_parameters(a.expert, b.expert));
}

TEST(Train, NoiseFreeSeparableBlobsReachNinetyNinePercent) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto all = data::make_blobs({2, 250, 8, 6, 1}, seed);
    const auto parts = data::split(all, 0.2, seed + 100);
    const auto clean = noise::symmetric_matrix(2, 0.0);
    auto model = ExpertNetModel::create(8, 2, {}, {}, seed + 200);
    const auto h = train(model, parts.train.with_noise(clean, 1), parts.validation.with_noise(clean, 2),
                         {50, 64, {0.01, 0.1, 40}}, seed + 300);
    EXPECT_GE(*h.epochs.back().val_full_accuracy, 0.99) << "seed " << seed;
  }
}

TEST(Train, SigmoidTerminalTrains) {
  const auto all = data::make_blobs({3, 60, 4, 6, 1}, 1);
  const auto parts = data::split(all, 0.25, 2);
  const auto m = noise::symmetric_matrix(3, 0.2);
  Architecture arch{{16}, {16, 8}, ExpertTerminal::sigmoid, 0.01};
  auto model = ExpertNetModel::create(4, 3, arch, {}, 3);
  const auto h = train(model, parts.train.with_noise(m, 1), parts.validation.with_noise(m, 2),
                       {30, 16, {0.01, 0.1, 0}}, 4);
  EXPECT_GT(*h.epochs.back().val_full_accuracy, 0.8);
}
