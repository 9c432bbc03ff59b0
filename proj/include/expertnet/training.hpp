#pragma once

// Epoch/batch plumbing shared by ExpertNet and the baselines, so that every
// method sees the same batch sequence for the same seed.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "expertnet/data.hpp"
#include "expertnet/error.hpp"
#include "expertnet/nn.hpp"
#include "expertnet/random.hpp"

namespace expertnet {

/// Fraction of predictions equal to the true labels.
inline double accuracy(const std::vector<std::size_t>& predictions,
                       const std::vector<std::size_t>& truths) {
  if (predictions.empty() || truths.empty()) throw DataError("accuracy of an empty set");
  if (predictions.size() != truths.size()) {
    throw DataError("accuracy: prediction and truth counts differ");
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) correct += predictions[i] == truths[i];
  return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

inline std::vector<std::size_t> argmax_rows(const Tensor& probs) {
  std::vector<std::size_t> out(probs.rows());
  for (std::size_t r = 0; r < probs.rows(); ++r) out[r] = argmax(probs.row(r));
  return out;
}

struct OptimizerSettings {
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

struct TrainOptions {
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  nn::StepSchedule schedule{0.01, 0.1, 40};
};

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double amateur_loss = 0.0;                 // mean over batches
  std::optional<double> expert_loss;         // ExpertNet only
  double val_amateur_accuracy = 0.0;
  std::optional<double> val_full_accuracy;   // ExpertNet only
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
};

struct TrainObserver {
  std::function<void(std::size_t epoch, std::span<const std::size_t> indices)> on_batch;
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Batch index lists for one epoch: a seeded permutation of [0, n) cut into
/// consecutive chunks of batch_size; the last chunk may be shorter.
inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size,
                                                           std::uint64_t seed, std::size_t epoch) {
  if (n == 0) throw ConfigError("cannot batch an empty training set");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, {0x5348554646ULL, epoch}));
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

struct Batch {
  Tensor x;
  std::vector<std::size_t> given;
  std::vector<std::size_t> truth;
};

inline Batch gather_batch(const data::Dataset& ds, std::span<const std::size_t> indices) {
  Batch b{gather_rows(ds.features(), indices), {}, {}};
  b.given.reserve(indices.size());
  b.truth.reserve(indices.size());
  const auto& given = ds.given_labels();
  for (std::size_t i : indices) {
    b.given.push_back(given[i]);
    b.truth.push_back(ds.true_labels()[i]);
  }
  return b;
}

namespace detail {

inline void check_training_inputs(const data::Dataset& train_set, const data::Dataset& val_set,
                                  const TrainOptions& options) {
  if (options.epochs == 0) throw ConfigError("epochs must be at least 1");
  if (options.batch_size == 0) throw ConfigError("batch size must be positive");
  if (train_set.size() == 0 || val_set.size() == 0) throw ConfigError("empty training or validation set");
  if (!train_set.has_given_labels()) throw ConfigError("training set has no given labels");
  if (train_set.dim() != val_set.dim() || train_set.classes() != val_set.classes()) {
    throw DimensionError("training and validation sets disagree on dimensions");
  }
}

/// Drives the epoch loop. `step(batch, lr)` returns (amateur loss, expert
/// loss or nullopt); `validate(record)` fills the accuracy fields.
template <typename StepFn, typename ValidateFn>
TrainHistory run_epochs(const data::Dataset& train_set, const TrainOptions& options,
                        std::uint64_t seed, const TrainObserver* observer, StepFn&& step,
                        ValidateFn&& validate) {
  TrainHistory history;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    const double lr = nn::lr_at(options.schedule, epoch);
    const auto batches = epoch_batches(train_set.size(), options.batch_size, seed, epoch);
    double amateur_sum = 0.0;
    double expert_sum = 0.0;
    bool has_expert = false;
    for (const auto& indices : batches) {
      if (observer && observer->on_batch) observer->on_batch(epoch, indices);
      const Batch batch = gather_batch(train_set, indices);
      const auto [amateur_loss, expert_loss] = step(batch, lr);
      amateur_sum += amateur_loss;
      if (expert_loss) {
        has_expert = true;
        expert_sum += *expert_loss;
      }
    }
    EpochRecord record;
    record.epoch = epoch;
    record.lr = lr;
    record.amateur_loss = amateur_sum / static_cast<double>(batches.size());
    if (has_expert) record.expert_loss = expert_sum / static_cast<double>(batches.size());
    validate(record);
    if (observer && observer->on_epoch) observer->on_epoch(record);
    history.epochs.push_back(record);
  }
  return history;
}

}  // namespace detail

}  // namespace expertnet
