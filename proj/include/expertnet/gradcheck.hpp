#pragma once

// Randomized finite-difference check of nn::evaluate.
//
// Each trial builds a small random network, batch, target set and loss,
// then compares every analytic parameter gradient with the central
// difference (L(p + h) - L(p - h)) / 2h. Trials cycle through hidden
// activation kinds, terminals and losses so every combination appears.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "expertnet/nn.hpp"
#include "expertnet/random.hpp"
#include "expertnet/tensor.hpp"

namespace expertnet::gradcheck {

struct Options {
  std::size_t trials = 120;
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Relative error is |a - n| / max(|a|, |n|, floor).
  double floor = 1e-8;
  /// Pre-activations of relu kinds must stay this far from 0 so that the
  /// perturbation never crosses the kink.
  double kink_margin = 1e-3;
  std::uint64_t seed = 20240601;
};

struct Trial {
  std::string description;
  std::size_t parameters = 0;
  double max_relative_error = 0.0;
  bool passed = true;
};

struct Report {
  std::vector<Trial> trials;
  double max_relative_error = 0.0;
  std::size_t failures = 0;
  std::vector<std::string> kinds_covered;  // activation kinds and losses seen

  bool passed() const { return failures == 0 && !trials.empty(); }
};

namespace detail {

inline double random_in(Rng& rng, double lo, double hi) { return rng.uniform(lo, hi); }

inline std::vector<double> random_distribution(Rng& rng, std::size_t k) {
  std::vector<double> p(k);
  double total = 0.0;
  for (double& v : p) total += (v = 0.05 + rng.uniform());
  for (double& v : p) v /= total;
  return p;
}

/// Smallest |pre-activation| feeding any relu or leaky relu layer.
inline double kink_distance(const nn::Network& net, const Tensor& x) {
  const auto cache = nn::forward_cached(net, x);
  double closest = INFINITY;
  for (std::size_t li = 0; li < net.layers().size(); ++li) {
    const auto* act = std::get_if<nn::Activation>(&net.layers()[li]);
    if (!act || (act->kind != nn::ActivationKind::relu && act->kind != nn::ActivationKind::leaky_relu)) continue;
    for (double z : cache.activations[li].values()) closest = std::min(closest, std::abs(z));
  }
  return closest;
}

struct Case {
  nn::Network net;
  Tensor x;
  Tensor targets;
  nn::Loss loss;
  std::string description;
};

inline Case make_case(std::size_t index, Rng& rng, const Options& options) {
  using nn::ActivationKind;
  static constexpr ActivationKind hidden_kinds[] = {ActivationKind::relu, ActivationKind::leaky_relu,
                                                    ActivationKind::sigmoid};
  const std::size_t k = 2 + rng.below(4);
  const std::size_t in = 1 + rng.below(6);
  const std::size_t depth = rng.below(3);  // hidden dense layers
  const ActivationKind hidden_kind = hidden_kinds[index % 3];
  const bool normalize_terminal = (index / 3) % 2 == 1;
  const bool forward_loss = (index / 6) % 2 == 1;

  std::string desc = "in=" + std::to_string(in) + " k=" + std::to_string(k) + " hidden=";
  std::vector<nn::Layer> layers;
  std::size_t width = in;
  for (std::size_t d = 0; d < depth; ++d) {
    const std::size_t w = 2 + rng.below(6);
    layers.emplace_back(nn::glorot_dense(width, w, rng));
    auto& dense = std::get<nn::Dense>(layers.back());
    for (double& b : dense.bias.values()) b = random_in(rng, -0.5, 0.5);
    nn::Activation act{hidden_kind};
    if (hidden_kind == ActivationKind::leaky_relu) act.slope = random_in(rng, 0.01, 0.3);
    layers.emplace_back(act);
    desc += std::to_string(w) + nn::to_string(hidden_kind) + " ";
    width = w;
  }
  if (depth == 0) desc += "none ";
  layers.emplace_back(nn::glorot_dense(width, k, rng));
  if (normalize_terminal) {
    layers.emplace_back(nn::Activation{ActivationKind::sigmoid});
    layers.emplace_back(nn::Activation{ActivationKind::normalize});
    desc += "terminal=sigmoid+normalize";
  } else {
    layers.emplace_back(nn::Activation{ActivationKind::softmax});
    desc += "terminal=softmax";
  }
  nn::Network net(in, std::move(layers));

  const std::size_t batch = 1 + rng.below(4);
  Tensor x = Tensor::matrix(batch, in);
  for (int attempt = 0;; ++attempt) {
    for (double& v : x.values()) v = rng.normal();
    if (kink_distance(net, x) > options.kink_margin) break;
    if (attempt > 1000) throw NumericError("gradcheck could not avoid relu kinks");
  }

  Tensor targets = Tensor::matrix(batch, k);
  const bool one_hot_targets = rng.below(2) == 0;
  for (std::size_t b = 0; b < batch; ++b) {
    if (one_hot_targets) {
      targets(b, rng.below(k)) = 1.0;
    } else {
      const auto t = random_distribution(rng, k);
      std::copy(t.begin(), t.end(), targets.row(b).begin());
    }
  }

  nn::Loss loss = nn::Loss::cross_entropy();
  if (forward_loss) {
    Tensor transition = Tensor::matrix(k, k);
    for (std::size_t i = 0; i < k; ++i) {
      const auto row = random_distribution(rng, k);
      std::copy(row.begin(), row.end(), transition.row(i).begin());
    }
    loss = nn::Loss::forward_corrected(std::move(transition));
    desc += " loss=forward";
  } else {
    desc += " loss=ce";
  }
  desc += one_hot_targets ? " targets=hard" : " targets=soft";
  desc += " batch=" + std::to_string(batch);
  return {std::move(net), std::move(x), std::move(targets), std::move(loss), std::move(desc)};
}

}  // namespace detail

inline Trial check_case(nn::Network net, const Tensor& x, const Tensor& targets, const nn::Loss& loss,
                        const Options& options = {}) {
  Trial trial;
  const auto eval = nn::evaluate(net, x, targets, loss);
  auto params = net.parameters();
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& param = *params[p];
    for (std::size_t i = 0; i < param.size(); ++i) {
      const double saved = param[i];
      param[i] = saved + options.step;
      const double up = nn::loss_value(loss, nn::forward(net, x), targets);
      param[i] = saved - options.step;
      const double down = nn::loss_value(loss, nn::forward(net, x), targets);
      param[i] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double analytic = eval.gradients[p][i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), options.floor});
      trial.max_relative_error = std::max(trial.max_relative_error, std::abs(analytic - numeric) / denom);
      ++trial.parameters;
    }
  }
  trial.passed = trial.max_relative_error <= options.tolerance;
  return trial;
}

inline Report run(const Options& options = {}) {
  Report report;
  Rng rng(options.seed);
  auto note = [&report](const std::string& kind) {
    if (std::find(report.kinds_covered.begin(), report.kinds_covered.end(), kind) == report.kinds_covered.end()) {
      report.kinds_covered.push_back(kind);
    }
  };
  for (std::size_t t = 0; t < options.trials; ++t) {
    auto c = detail::make_case(t, rng, options);
    note("dense");
    for (const auto& layer : c.net.layers()) {
      if (const auto* a = std::get_if<nn::Activation>(&layer)) note(nn::to_string(a->kind));
    }
    note(c.loss.kind == nn::LossKind::cross_entropy ? "cross-entropy" : "forward-corrected");
    Trial trial = check_case(c.net, c.x, c.targets, c.loss, options);
    trial.description = std::move(c.description);
    report.max_relative_error = std::max(report.max_relative_error, trial.max_relative_error);
    if (!trial.passed) ++report.failures;
    report.trials.push_back(std::move(trial));
  }
  std::sort(report.kinds_covered.begin(), report.kinds_covered.end());
  return report;
}

}  // namespace expertnet::gradcheck
