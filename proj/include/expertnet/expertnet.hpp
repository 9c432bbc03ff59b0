#pragma once

// Amateur/Expert co-training.
//
// The Amateur maps features to class probabilities. The Expert maps the
// Amateur's probabilities concatenated with the one-hot given label to
// corrected class probabilities. Per minibatch:
//
//   1. pA <- Amateur(x)
//   2. z  <- [pA, onehot(y)]                       (pA held constant)
//   3. one SGD step on the Expert for CE(t, Expert(z))
//   4. pE <- Expert(z) with the updated Expert
//   5. one SGD step on the Amateur for CE(pE, Amateur(x))   (pE held constant)

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "expertnet/data.hpp"
#include "expertnet/error.hpp"
#include "expertnet/nn.hpp"
#include "expertnet/random.hpp"
#include "expertnet/training.hpp"

namespace expertnet {

enum class ExpertTerminal {
  softmax,
  /// Sigmoid outputs renormalized to sum to one.
  sigmoid,
};

struct Architecture {
  std::vector<std::size_t> amateur_hidden{128, 64};
  std::vector<std::size_t> expert_hidden{64, 32};
  ExpertTerminal expert_terminal = ExpertTerminal::softmax;
  double leaky_slope = nn::kDefaultLeakySlope;
};

/// Feature classifier used by the Amateur and by every baseline: relu hidden
/// layers, softmax terminal.
inline nn::Network make_amateur(std::size_t feature_dim, std::size_t classes,
                                const Architecture& arch, Rng& rng) {
  return nn::make_mlp(feature_dim, arch.amateur_hidden, classes,
                      nn::Activation{nn::ActivationKind::relu}, nn::Terminal::softmax, rng);
}

/// 2K -> hidden -> K, leaky-relu hidden layers.
inline nn::Network make_expert(std::size_t classes, const Architecture& arch, Rng& rng) {
  const auto terminal = arch.expert_terminal == ExpertTerminal::softmax
                            ? nn::Terminal::softmax
                            : nn::Terminal::sigmoid_normalized;
  return nn::make_mlp(2 * classes, arch.expert_hidden, classes,
                      nn::Activation{nn::ActivationKind::leaky_relu, arch.leaky_slope}, terminal,
                      rng);
}

struct ExpertNetModel {
  nn::Network amateur;
  nn::Network expert;
  nn::OptimizerState amateur_opt;
  nn::OptimizerState expert_opt;

  std::size_t classes() const { return amateur.output_dim(); }
  std::size_t feature_dim() const { return amateur.input_dim(); }

  /// Weights from one seed: the Amateur draws first, then the Expert.
  static ExpertNetModel create(std::size_t feature_dim, std::size_t classes,
                               const Architecture& arch, const OptimizerSettings& opt,
                               std::uint64_t seed) {
    if (classes < 2) throw ConfigError("ExpertNet needs at least two classes");
    Rng rng(seed);
    nn::Network amateur = make_amateur(feature_dim, classes, arch, rng);
    nn::Network expert = make_expert(classes, arch, rng);
    auto amateur_opt = nn::OptimizerState::for_network(amateur, opt.momentum, opt.weight_decay, {});
    auto expert_opt = nn::OptimizerState::for_network(expert, opt.momentum, opt.weight_decay, {});
    ExpertNetModel model{std::move(amateur), std::move(expert), std::move(amateur_opt),
                         std::move(expert_opt)};
    model.validate();
    return model;
  }

  void validate() const {
    if (!amateur.is_classifier() || !expert.is_classifier()) {
      throw ConfigError("both networks must end in a probability layer");
    }
    if (expert.input_dim() != 2 * classes() || expert.output_dim() != classes()) {
      throw DimensionError("expert must map 2K inputs to K outputs");
    }
  }
};

inline constexpr double kDistributionTolerance = 1e-9;

/// [probs..., onehot(given_label)...], length 2K.
inline std::vector<double> expert_input(std::span<const double> probs, std::size_t given_label) {
  const std::size_t k = probs.size();
  if (k == 0) throw DataError("empty probability vector");
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0 && p <= 1.0)) throw DataError("probability entry outside [0, 1]");
    total += p;
  }
  if (std::abs(total - 1.0) > kDistributionTolerance) {
    throw DataError("probabilities do not sum to 1");
  }
  if (given_label >= k) throw DataError("given label outside [0, K)");
  std::vector<double> z(2 * k, 0.0);
  std::copy(probs.begin(), probs.end(), z.begin());
  z[k + given_label] = 1.0;
  return z;
}

/// Row-wise expert_input over a batch.
inline Tensor expert_inputs(const Tensor& probs, const std::vector<std::size_t>& given) {
  if (probs.rows() != given.size()) throw DataError("one given label per row required");
  const std::size_t k = probs.cols();
  Tensor z = Tensor::matrix(probs.rows(), 2 * k);
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    const auto row = expert_input(probs.row(r), given[r]);
    std::copy(row.begin(), row.end(), z.row(r).begin());
  }
  return z;
}

struct StepLosses {
  double amateur = 0.0;  // CE(pE, Amateur(x)) before the Amateur update
  double expert = 0.0;   // CE(t, Expert(z)) before the Expert update
};

enum class StepPhase {
  amateur_predicted,   // data = pA
  expert_input_built,  // data = z
  expert_updated,      // data = z, target = onehot(t)
  expert_predicted,    // data = pE
  amateur_updated,     // data = x, target = pE
};

struct StepEvent {
  StepPhase phase;
  const ExpertNetModel& model;
  const Tensor* data = nullptr;
  const Tensor* target = nullptr;
};

/// Optional instrumentation hook called after each phase of train_step.
using StepProbe = std::function<void(const StepEvent&)>;

inline StepLosses train_step(ExpertNetModel& model, const Batch& batch, double lr,
                             const StepProbe& probe = {}) {
  const std::size_t k = model.classes();
  if (batch.x.rank() != 2 || batch.x.rows() == 0) throw DataError("empty batch");
  if (batch.x.cols() != model.feature_dim()) throw DataError("batch feature width mismatch");
  if (batch.given.size() != batch.x.rows() || batch.truth.size() != batch.x.rows()) {
    throw DataError("batch label counts do not match feature rows");
  }
  auto notify = [&](StepPhase phase, const Tensor* data, const Tensor* target = nullptr) {
    if (probe) probe(StepEvent{phase, model, data, target});
  };

  const Tensor amateur_probs = nn::forward(model.amateur, batch.x);
  notify(StepPhase::amateur_predicted, &amateur_probs);

  const Tensor z = expert_inputs(amateur_probs, batch.given);
  notify(StepPhase::expert_input_built, &z);

  const Tensor truth = data::one_hot_rows(batch.truth, k);
  StepLosses losses;
  {
    auto eval = nn::evaluate(model.expert, z, truth, nn::Loss::cross_entropy());
    losses.expert = eval.loss;
    nn::sgd_step(model.expert, eval.gradients, model.expert_opt, lr);
  }
  notify(StepPhase::expert_updated, &z, &truth);

  const Tensor expert_probs = nn::forward(model.expert, z);
  notify(StepPhase::expert_predicted, &expert_probs);

  {
    auto eval = nn::evaluate(model.amateur, batch.x, expert_probs, nn::Loss::cross_entropy());
    losses.amateur = eval.loss;
    nn::sgd_step(model.amateur, eval.gradients, model.amateur_opt, lr);
  }
  notify(StepPhase::amateur_updated, &batch.x, &expert_probs);
  return losses;
}

// ---------------------------------------------------------------------------
// Inference

/// argmax Amateur(x) per row; ties to the lowest class.
inline std::vector<std::size_t> infer_amateur(const ExpertNetModel& model, const Tensor& x) {
  if (x.rank() != 2 || x.cols() != model.feature_dim()) throw DataError("feature width mismatch");
  return argmax_rows(nn::forward(model.amateur, x));
}

/// Full-mode probabilities: Expert([Amateur(x), onehot(y)]).
inline Tensor full_probabilities(const ExpertNetModel& model, const Tensor& x,
                                 const std::vector<std::size_t>& given) {
  if (x.rank() != 2 || x.cols() != model.feature_dim()) throw DataError("feature width mismatch");
  return nn::forward(model.expert, expert_inputs(nn::forward(model.amateur, x), given));
}

/// argmax Expert([Amateur(x), onehot(y)]) per row; ties to the lowest class.
inline std::vector<std::size_t> infer_full(const ExpertNetModel& model, const Tensor& x,
                                           const std::vector<std::size_t>& given) {
  return argmax_rows(full_probabilities(model, x, given));
}

inline std::size_t infer_amateur(const ExpertNetModel& model, std::span<const double> x) {
  return infer_amateur(model, Tensor({1, x.size()}, std::vector<double>(x.begin(), x.end())))[0];
}

inline std::size_t infer_full(const ExpertNetModel& model, std::span<const double> x,
                              std::size_t given_label) {
  return infer_full(model, Tensor({1, x.size()}, std::vector<double>(x.begin(), x.end())),
                    {given_label})[0];
}

// ---------------------------------------------------------------------------
// Training

/// Alternating training over seeded epoch shuffles. `seed` drives batch order
/// only; weights come from ExpertNetModel::create.
inline TrainHistory train(ExpertNetModel& model, const data::Dataset& train_set,
                          const data::Dataset& val_set, const TrainOptions& options,
                          std::uint64_t seed, const TrainObserver* observer = nullptr) {
  detail::check_training_inputs(train_set, val_set, options);
  if (!val_set.has_given_labels()) throw ConfigError("validation set has no given labels");
  if (train_set.dim() != model.feature_dim() || train_set.classes() != model.classes()) {
    throw DimensionError("dataset does not match model dimensions");
  }
  model.amateur_opt.schedule = options.schedule;
  model.expert_opt.schedule = options.schedule;

  auto step = [&](const Batch& batch, double lr) {
    const StepLosses l = train_step(model, batch, lr);
    return std::pair<double, std::optional<double>>{l.amateur, l.expert};
  };
  auto validate = [&](EpochRecord& record) {
    record.val_amateur_accuracy =
        accuracy(infer_amateur(model, val_set.features()), val_set.true_labels());
    record.val_full_accuracy = accuracy(
        infer_full(model, val_set.features(), val_set.given_labels()), val_set.true_labels());
  };
  return detail::run_epochs(train_set, options, seed, observer, step, validate);
}

}  // namespace expertnet
