#pragma once

// Image-only reference methods trained on given labels: plain cross-entropy,
// Bootstrap (convex mix of given label and own prediction as the target) and
// Forward correction (predictions pushed through the noise matrix before
// scoring against the given label).

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "expertnet/data.hpp"
#include "expertnet/error.hpp"
#include "expertnet/expertnet.hpp"
#include "expertnet/nn.hpp"
#include "expertnet/noise.hpp"
#include "expertnet/training.hpp"

namespace expertnet::baselines {

struct PlainCrossEntropy {};

enum class BootstrapVariant { soft, hard };

struct Bootstrap {
  double beta = 0.8;
  BootstrapVariant variant = BootstrapVariant::soft;

  static Bootstrap soft(double beta = 0.8) { return {beta, BootstrapVariant::soft}; }
  static Bootstrap hard(double beta = 0.95) { return {beta, BootstrapVariant::hard}; }
};

struct Forward {
  noise::TransitionMatrix matrix;
};

using BaselineSpec = std::variant<PlainCrossEntropy, Bootstrap, Forward>;

inline std::string name(const BaselineSpec& spec) {
  if (std::holds_alternative<PlainCrossEntropy>(spec)) return "plain-ce";
  if (std::holds_alternative<Bootstrap>(spec)) return "bootstrap";
  return "forward";
}

/// soft: beta * onehot(y) + (1 - beta) * pred
/// hard: beta * onehot(y) + (1 - beta) * onehot(argmax pred)
inline std::vector<double> bootstrap_target(std::span<const double> pred, std::size_t given_label,
                                            double beta, BootstrapVariant variant) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("bootstrap beta must lie in [0, 1]");
  const std::size_t k = pred.size();
  if (given_label >= k) throw DataError("given label outside [0, K)");
  std::vector<double> target(k);
  const std::size_t top = variant == BootstrapVariant::hard ? argmax(pred) : k;
  for (std::size_t j = 0; j < k; ++j) {
    const double model_part =
        variant == BootstrapVariant::soft ? pred[j] : (j == top ? 1.0 : 0.0);
    target[j] = beta * (j == given_label ? 1.0 : 0.0) + (1.0 - beta) * model_part;
  }
  return target;
}

/// out_j = sum_i T[i][j] * pred_i, the predicted distribution of the given label.
inline std::vector<double> forward_corrected_prediction(std::span<const double> pred,
                                                        const noise::TransitionMatrix& matrix) {
  const std::size_t k = pred.size();
  if (matrix.classes() != k) throw DimensionError("transition matrix does not match K");
  std::vector<double> out(k, 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < k; ++i) acc += pred[i] * matrix(i, j);
    out[j] = acc;
  }
  return out;
}

struct BaselineModel {
  nn::Network net;
  nn::OptimizerState opt;

  /// Same layout and initialization stream as the ExpertNet Amateur.
  static BaselineModel create(std::size_t feature_dim, std::size_t classes,
                              const Architecture& arch, const OptimizerSettings& settings,
                              std::uint64_t seed) {
    Rng rng(seed);
    nn::Network net = make_amateur(feature_dim, classes, arch, rng);
    auto opt = nn::OptimizerState::for_network(net, settings.momentum, settings.weight_decay, {});
    return {std::move(net), std::move(opt)};
  }
};

namespace detail {

inline void check_spec(const BaselineSpec& spec, std::size_t classes) {
  if (const auto* b = std::get_if<Bootstrap>(&spec)) {
    if (!(b->beta > 0.0 && b->beta <= 1.0)) throw ConfigError("bootstrap beta must lie in (0, 1]");
  }
  if (const auto* f = std::get_if<Forward>(&spec)) {
    if (f->matrix.classes() != classes) throw DimensionError("forward matrix does not match K");
  }
}

}  // namespace detail

/// One SGD step of the baseline on a batch; returns the batch loss.
inline double baseline_step(const BaselineSpec& spec, BaselineModel& model, const Batch& batch,
                            double lr) {
  const std::size_t k = model.net.output_dim();
  Tensor targets = data::one_hot_rows(batch.given, k);
  nn::Loss loss = nn::Loss::cross_entropy();
  if (const auto* b = std::get_if<Bootstrap>(&spec)) {
    const Tensor pred = nn::forward(model.net, batch.x);
    for (std::size_t r = 0; r < pred.rows(); ++r) {
      const auto t = bootstrap_target(pred.row(r), batch.given[r], b->beta, b->variant);
      std::copy(t.begin(), t.end(), targets.row(r).begin());
    }
  } else if (const auto* f = std::get_if<Forward>(&spec)) {
    loss = nn::Loss::forward_corrected(f->matrix.tensor());
  }
  auto eval = nn::evaluate(model.net, batch.x, targets, loss);
  nn::sgd_step(model.net, eval.gradients, model.opt, lr);
  return eval.loss;
}

/// Same batching, shuffling and optimizer contract as expertnet::train.
/// Validation uses features only.
inline TrainHistory train_baseline(const BaselineSpec& spec, BaselineModel& model,
                                   const data::Dataset& train_set, const data::Dataset& val_set,
                                   const TrainOptions& options, std::uint64_t seed,
                                   const TrainObserver* observer = nullptr) {
  expertnet::detail::check_training_inputs(train_set, val_set, options);
  detail::check_spec(spec, train_set.classes());
  if (train_set.dim() != model.net.input_dim() || train_set.classes() != model.net.output_dim()) {
    throw DimensionError("dataset does not match model dimensions");
  }
  model.opt.schedule = options.schedule;
  auto step = [&](const Batch& batch, double lr) {
    return std::pair<double, std::optional<double>>{baseline_step(spec, model, batch, lr),
                                                    std::nullopt};
  };
  auto validate = [&](EpochRecord& record) {
    record.val_amateur_accuracy =
        accuracy(argmax_rows(nn::forward(model.net, val_set.features())), val_set.true_labels());
  };
  return expertnet::detail::run_epochs(train_set, options, seed, observer, step, validate);
}

}  // namespace expertnet::baselines
