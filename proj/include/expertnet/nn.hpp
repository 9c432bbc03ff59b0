#pragma once

// Minimal layered feed-forward engine: forward evaluation with cached
// activations, reverse-mode gradients, cross-entropy losses on soft targets,
// and SGD with momentum, weight decay and step learning-rate decay.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "expertnet/error.hpp"
#include "expertnet/random.hpp"
#include "expertnet/tensor.hpp"

namespace expertnet::nn {

/// Clamp applied inside every logarithm.
inline constexpr double kLogClamp = 1e-12;
inline constexpr double kDefaultLeakySlope = 0.01;

enum class ActivationKind {
  relu,
  leaky_relu,
  sigmoid,
  softmax,
  /// Divides a positive row by its sum. Follows a sigmoid to turn its
  /// outputs into a distribution.
  normalize,
};

inline const char* to_string(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::relu: return "relu";
    case ActivationKind::leaky_relu: return "leaky_relu";
    case ActivationKind::sigmoid: return "sigmoid";
    case ActivationKind::softmax: return "softmax";
    case ActivationKind::normalize: return "normalize";
  }
  return "?";
}

struct Dense {
  Tensor weight;  // out x in
  Tensor bias;    // out

  std::size_t in() const { return weight.cols(); }
  std::size_t out() const { return weight.rows(); }
};

struct Activation {
  ActivationKind kind = ActivationKind::relu;
  double slope = kDefaultLeakySlope;  // leaky_relu only
};

using Layer = std::variant<Dense, Activation>;

// ---------------------------------------------------------------------------
// Elementwise building blocks

/// Max-subtracted softmax. Throws on empty or non-finite input.
inline std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw DimensionError("softmax of an empty vector");
  double hi = -std::numeric_limits<double>::infinity();
  for (double z : logits) {
    if (!std::isfinite(z)) throw NumericError("softmax input is not finite");
    hi = std::max(hi, z);
  }
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    out[k] = std::exp(logits[k] - hi);
    total += out[k];
  }
  for (double& p : out) p /= total;
  return out;
}

/// -sum_k target_k * ln(max(prediction_k, 1e-12)).
inline double cross_entropy(std::span<const double> target, std::span<const double> prediction) {
  if (target.size() != prediction.size()) {
    throw DimensionError("cross_entropy: target has " + std::to_string(target.size()) +
                         " entries, prediction has " + std::to_string(prediction.size()));
  }
  double loss = 0.0;
  for (std::size_t k = 0; k < target.size(); ++k) {
    if (target[k] != 0.0) loss -= target[k] * std::log(std::max(prediction[k], kLogClamp));
  }
  // -0.0 for an exact match is still "nonnegative" but prints badly.
  return loss == 0.0 ? 0.0 : loss;
}

inline double sigmoid(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

// ---------------------------------------------------------------------------
// Network

class Network {
 public:
  Network() = default;

  Network(std::size_t input_dim, std::vector<Layer> layers)
      : input_dim_(input_dim), layers_(std::move(layers)) {
    if (input_dim_ == 0) throw DimensionError("network input dimension must be positive");
    std::size_t width = input_dim_;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (const auto* dense = std::get_if<Dense>(&layers_[i])) {
        if (dense->weight.rank() != 2 || dense->bias.rank() != 1 ||
            dense->bias.size() != dense->weight.rows()) {
          throw DimensionError("dense layer " + std::to_string(i) +
                               ": weight/bias dimensions are inconsistent");
        }
        if (dense->in() != width) {
          throw DimensionError("dense layer " + std::to_string(i) + " expects width " +
                               std::to_string(dense->in()) + " but receives " +
                               std::to_string(width));
        }
        width = dense->out();
      } else {
        const auto& act = std::get<Activation>(layers_[i]);
        if (act.kind == ActivationKind::leaky_relu && !(act.slope > 0.0 && act.slope < 1.0)) {
          throw ConfigError("leaky-relu slope must lie in (0, 1)");
        }
      }
    }
    output_dim_ = width;
  }

  std::size_t input_dim() const noexcept { return input_dim_; }
  std::size_t output_dim() const noexcept { return output_dim_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }

  /// True when the terminal layer emits probability rows.
  bool is_classifier() const noexcept {
    if (layers_.empty()) return false;
    const auto* act = std::get_if<Activation>(&layers_.back());
    return act && (act->kind == ActivationKind::softmax || act->kind == ActivationKind::normalize);
  }

  /// Weight then bias of every dense layer, in layer order.
  std::vector<Tensor*> parameters() {
    std::vector<Tensor*> out;
    for (auto& layer : layers_) {
      if (auto* dense = std::get_if<Dense>(&layer)) {
        out.push_back(&dense->weight);
        out.push_back(&dense->bias);
      }
    }
    return out;
  }

  std::vector<const Tensor*> parameters() const {
    std::vector<const Tensor*> out;
    for (const auto& layer : layers_) {
      if (const auto* dense = std::get_if<Dense>(&layer)) {
        out.push_back(&dense->weight);
        out.push_back(&dense->bias);
      }
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const Tensor* p : parameters()) n += p->size();
    return n;
  }

  /// Incremented by every optimizer update; lets callers observe when the
  /// parameters last changed.
  std::uint64_t version() const noexcept { return version_; }
  void bump_version() noexcept { ++version_; }

  /// Parameters equal, version counter ignored.
  friend bool same_parameters(const Network& a, const Network& b) {
    const auto pa = a.parameters();
    const auto pb = b.parameters();
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
      if (!(*pa[i] == *pb[i])) return false;
    }
    return true;
  }

 private:
  std::size_t input_dim_ = 0;
  std::size_t output_dim_ = 0;
  std::vector<Layer> layers_;
  std::uint64_t version_ = 0;
};

/// Dense layer with weights uniform in +-sqrt(6 / (fan_in + fan_out)) and zero bias.
inline Dense glorot_dense(std::size_t in, std::size_t out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  Dense d{Tensor::matrix(out, in), Tensor({out})};
  for (double& w : d.weight.values()) w = rng.uniform(-limit, limit);
  return d;
}

enum class Terminal { none, softmax, sigmoid_normalized };

/// input -> hidden[0] -> ... -> output, `hidden` activation between dense
/// layers, `terminal` after the last one.
inline Network make_mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                        std::size_t output_dim, Activation hidden_activation, Terminal terminal,
                        Rng& rng) {
  std::vector<Layer> layers;
  std::size_t width = input_dim;
  for (std::size_t h : hidden) {
    layers.emplace_back(glorot_dense(width, h, rng));
    layers.emplace_back(hidden_activation);
    width = h;
  }
  layers.emplace_back(glorot_dense(width, output_dim, rng));
  switch (terminal) {
    case Terminal::none: break;
    case Terminal::softmax: layers.emplace_back(Activation{ActivationKind::softmax}); break;
    case Terminal::sigmoid_normalized:
      layers.emplace_back(Activation{ActivationKind::sigmoid});
      layers.emplace_back(Activation{ActivationKind::normalize});
      break;
  }
  return Network(input_dim, std::move(layers));
}

// ---------------------------------------------------------------------------
// Forward

struct ForwardCache {
  /// activations[0] is the input batch, activations[i + 1] the output of layer i.
  std::vector<Tensor> activations;

  const Tensor& output() const { return activations.back(); }
};

namespace detail {

inline Tensor dense_forward(const Dense& d, const Tensor& in) {
  const std::size_t batch = in.rows();
  const std::size_t n_in = d.in();
  const std::size_t n_out = d.out();
  Tensor out = Tensor::matrix(batch, n_out);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto x = in.row(b);
    auto y = out.row(b);
    for (std::size_t o = 0; o < n_out; ++o) {
      const auto w = d.weight.row(o);
      double acc = d.bias[o];
      for (std::size_t i = 0; i < n_in; ++i) acc += w[i] * x[i];
      y[o] = acc;
    }
  }
  return out;
}

inline Tensor activation_forward(const Activation& act, const Tensor& in) {
  Tensor out = in;
  switch (act.kind) {
    case ActivationKind::relu:
      for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
      break;
    case ActivationKind::leaky_relu:
      for (double& v : out.values()) v = v > 0.0 ? v : act.slope * v;
      break;
    case ActivationKind::sigmoid:
      for (double& v : out.values()) v = sigmoid(v);
      break;
    case ActivationKind::softmax:
      for (std::size_t b = 0; b < in.rows(); ++b) {
        const auto p = softmax(in.row(b));
        std::copy(p.begin(), p.end(), out.row(b).begin());
      }
      break;
    case ActivationKind::normalize:
      for (std::size_t b = 0; b < in.rows(); ++b) {
        auto r = out.row(b);
        double total = 0.0;
        for (double v : r) {
          if (!(v >= 0.0)) throw NumericError("normalize expects nonnegative inputs");
          total += v;
        }
        if (!(total > 0.0)) throw NumericError("normalize of an all-zero row");
        for (double& v : r) v /= total;
      }
      break;
    default:
      throw ConfigError("unknown activation kind");
  }
  return out;
}

}  // namespace detail

inline ForwardCache forward_cached(const Network& net, const Tensor& batch) {
  if (batch.rank() != 2 || batch.cols() != net.input_dim()) {
    throw DimensionError("batch width does not match network input dimension " +
                         std::to_string(net.input_dim()));
  }
  ForwardCache cache;
  cache.activations.reserve(net.layers().size() + 1);
  cache.activations.push_back(batch);
  for (const Layer& layer : net.layers()) {
    const Tensor& in = cache.activations.back();
    cache.activations.push_back(std::visit(
        [&](const auto& l) {
          if constexpr (std::is_same_v<std::decay_t<decltype(l)>, Dense>) {
            return detail::dense_forward(l, in);
          } else {
            return detail::activation_forward(l, in);
          }
        },
        layer));
  }
  if (!cache.output().all_finite()) throw NumericError("network output is not finite");
  return cache;
}

inline Tensor forward(const Network& net, const Tensor& batch) {
  return std::move(forward_cached(net, batch).activations.back());
}

// ---------------------------------------------------------------------------
// Losses

enum class LossKind {
  /// Mean over rows of cross_entropy(target_row, output_row).
  cross_entropy,
  /// Mean over rows of cross_entropy(target_row, output_row * T): the output
  /// is pushed through a row-stochastic transition matrix before scoring.
  forward_corrected,
};

struct Loss {
  LossKind kind = LossKind::cross_entropy;
  Tensor transition;  // K x K, forward_corrected only

  static Loss cross_entropy() { return {}; }
  static Loss forward_corrected(Tensor transition) {
    return {LossKind::forward_corrected, std::move(transition)};
  }
};

namespace detail {

/// out_j = sum_i p_i * T[i][j]
inline void transition_apply(const Tensor& transition, std::span<const double> p,
                             std::span<double> out) {
  const std::size_t k = p.size();
  for (std::size_t j = 0; j < k; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < k; ++i) acc += p[i] * transition(i, j);
    out[j] = acc;
  }
}

inline void check_loss_inputs(const Loss& loss, const Tensor& output, const Tensor& targets) {
  if (!output.same_shape(targets)) throw DimensionError("targets do not match output shape");
  if (loss.kind == LossKind::forward_corrected) {
    const std::size_t k = output.cols();
    if (loss.transition.rank() != 2 || loss.transition.rows() != k || loss.transition.cols() != k) {
      throw DimensionError("transition matrix must be K x K with K = " + std::to_string(k));
    }
  }
}

}  // namespace detail

/// Mean loss over the batch.
inline double loss_value(const Loss& loss, const Tensor& output, const Tensor& targets) {
  detail::check_loss_inputs(loss, output, targets);
  const std::size_t batch = output.rows();
  double total = 0.0;
  switch (loss.kind) {
    case LossKind::cross_entropy:
      for (std::size_t b = 0; b < batch; ++b) total += cross_entropy(targets.row(b), output.row(b));
      break;
    case LossKind::forward_corrected: {
      std::vector<double> q(output.cols());
      for (std::size_t b = 0; b < batch; ++b) {
        detail::transition_apply(loss.transition, output.row(b), q);
        total += cross_entropy(targets.row(b), q);
      }
      break;
    }
    default:
      throw ConfigError("unknown loss kind");
  }
  return total / static_cast<double>(batch);
}

/// d(mean loss) / d(output), same shape as output.
inline Tensor loss_gradient(const Loss& loss, const Tensor& output, const Tensor& targets) {
  detail::check_loss_inputs(loss, output, targets);
  const std::size_t batch = output.rows();
  const std::size_t k = output.cols();
  const double scale = 1.0 / static_cast<double>(batch);
  Tensor grad = Tensor::matrix(batch, k);
  // d/dp of -t ln(max(p, eps)); zero where the clamp is active.
  auto ce_grad = [&](std::span<const double> t, std::span<const double> p, std::span<double> g) {
    for (std::size_t j = 0; j < k; ++j) {
      g[j] = (t[j] != 0.0 && p[j] > kLogClamp) ? -t[j] / p[j] * scale : 0.0;
    }
  };
  switch (loss.kind) {
    case LossKind::cross_entropy:
      for (std::size_t b = 0; b < batch; ++b) ce_grad(targets.row(b), output.row(b), grad.row(b));
      break;
    case LossKind::forward_corrected: {
      std::vector<double> q(k), gq(k);
      for (std::size_t b = 0; b < batch; ++b) {
        detail::transition_apply(loss.transition, output.row(b), q);
        ce_grad(targets.row(b), q, gq);
        auto g = grad.row(b);
        for (std::size_t i = 0; i < k; ++i) {
          double acc = 0.0;
          for (std::size_t j = 0; j < k; ++j) acc += loss.transition(i, j) * gq[j];
          g[i] = acc;
        }
      }
      break;
    }
    default:
      throw ConfigError("unknown loss kind");
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Reverse mode

struct Evaluation {
  double loss = 0.0;
  Tensor output;
  std::vector<Tensor> gradients;  // aligned with Network::parameters()
};

namespace detail {

inline Tensor activation_backward(const Activation& act, const Tensor& in, const Tensor& out,
                                  Tensor delta) {
  switch (act.kind) {
    case ActivationKind::relu:
      for (std::size_t i = 0; i < delta.size(); ++i) {
        if (!(in[i] > 0.0)) delta[i] = 0.0;
      }
      break;
    case ActivationKind::leaky_relu:
      for (std::size_t i = 0; i < delta.size(); ++i) {
        if (!(in[i] > 0.0)) delta[i] *= act.slope;
      }
      break;
    case ActivationKind::sigmoid:
      for (std::size_t i = 0; i < delta.size(); ++i) delta[i] *= out[i] * (1.0 - out[i]);
      break;
    case ActivationKind::softmax:
      // dz_k = p_k (g_k - sum_j p_j g_j)
      for (std::size_t b = 0; b < delta.rows(); ++b) {
        auto g = delta.row(b);
        const auto p = out.row(b);
        double dot = 0.0;
        for (std::size_t j = 0; j < g.size(); ++j) dot += p[j] * g[j];
        for (std::size_t j = 0; j < g.size(); ++j) g[j] = p[j] * (g[j] - dot);
      }
      break;
    case ActivationKind::normalize:
      // y = s / S: ds_k = (g_k - sum_j y_j g_j) / S
      for (std::size_t b = 0; b < delta.rows(); ++b) {
        auto g = delta.row(b);
        const auto s = in.row(b);
        const auto y = out.row(b);
        double total = 0.0, dot = 0.0;
        for (std::size_t j = 0; j < g.size(); ++j) {
          total += s[j];
          dot += y[j] * g[j];
        }
        for (std::size_t j = 0; j < g.size(); ++j) g[j] = (g[j] - dot) / total;
      }
      break;
    default:
      throw ConfigError("unknown activation kind");
  }
  return delta;
}

}  // namespace detail

/// Loss and gradients of the mean-over-batch loss w.r.t. every parameter.
inline Evaluation evaluate(const Network& net, const Tensor& batch, const Tensor& targets,
                           const Loss& loss) {
  ForwardCache cache = forward_cached(net, batch);
  Evaluation result;
  result.loss = loss_value(loss, cache.output(), targets);
  if (!std::isfinite(result.loss)) throw NumericError("loss is not finite");

  const auto params = net.parameters();
  result.gradients.resize(params.size());
  std::size_t slot = params.size();

  Tensor delta = loss_gradient(loss, cache.output(), targets);
  const auto& layers = net.layers();
  for (std::size_t li = layers.size(); li-- > 0;) {
    const Tensor& in = cache.activations[li];
    const Tensor& out = cache.activations[li + 1];
    if (const auto* dense = std::get_if<Dense>(&layers[li])) {
      const std::size_t n_batch = in.rows();
      const std::size_t n_in = dense->in();
      const std::size_t n_out = dense->out();
      Tensor grad_w = Tensor::matrix(n_out, n_in);
      Tensor grad_b({n_out});
      Tensor delta_in = Tensor::matrix(n_batch, n_in);
      for (std::size_t b = 0; b < n_batch; ++b) {
        const auto x = in.row(b);
        const auto d = delta.row(b);
        auto dx = delta_in.row(b);
        for (std::size_t o = 0; o < n_out; ++o) {
          const double g = d[o];
          if (g == 0.0) continue;
          grad_b[o] += g;
          auto gw = grad_w.row(o);
          const auto w = dense->weight.row(o);
          for (std::size_t i = 0; i < n_in; ++i) {
            gw[i] += g * x[i];
            dx[i] += g * w[i];
          }
        }
      }
      result.gradients[--slot] = std::move(grad_b);
      result.gradients[--slot] = std::move(grad_w);
      delta = std::move(delta_in);
    } else {
      delta = detail::activation_backward(std::get<Activation>(layers[li]), in, out,
                                          std::move(delta));
    }
  }
  result.output = std::move(cache.activations.back());
  return result;
}

inline std::vector<Tensor> gradients(const Network& net, const Tensor& batch,
                                     const Tensor& targets, const Loss& loss) {
  return evaluate(net, batch, targets, loss).gradients;
}

// ---------------------------------------------------------------------------
// Optimizer

/// lr(epoch) = base_lr * factor^floor(epoch / period); period 0 disables decay.
struct StepSchedule {
  double base_lr = 0.01;
  double factor = 0.1;
  std::size_t period = 0;

  bool operator==(const StepSchedule&) const = default;
};

inline double lr_at(const StepSchedule& schedule, std::size_t epoch) {
  if (!(schedule.base_lr > 0.0)) throw ConfigError("base learning rate must be positive");
  if (!(schedule.factor > 0.0)) throw ConfigError("decay factor must be positive");
  if (schedule.period == 0) return schedule.base_lr;
  const auto steps = static_cast<int>(epoch / schedule.period);
  return schedule.base_lr * std::pow(schedule.factor, steps);
}

struct OptimizerState {
  std::vector<Tensor> velocity;  // aligned with Network::parameters()
  double momentum = 0.9;
  double weight_decay = 1e-4;
  StepSchedule schedule;

  static OptimizerState for_network(const Network& net, double momentum, double weight_decay,
                                    StepSchedule schedule) {
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be nonnegative");
    OptimizerState state{{}, momentum, weight_decay, schedule};
    for (const Tensor* p : net.parameters()) state.velocity.emplace_back(p->shape());
    return state;
  }

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

/// v <- momentum * v + (grad + weight_decay * param); param <- param - lr * v.
/// A zero learning rate leaves parameters, velocity and version untouched.
inline void sgd_step(Network& net, const std::vector<Tensor>& grads, OptimizerState& state,
                     double lr) {
  if (lr < 0.0 || !std::isfinite(lr)) throw ConfigError("learning rate must be nonnegative");
  auto params = net.parameters();
  if (grads.size() != params.size() || state.velocity.size() != params.size()) {
    throw DimensionError("gradient/velocity count does not match parameter count");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!grads[i].same_shape(*params[i]) || !state.velocity[i].same_shape(*params[i])) {
      throw DimensionError("gradient/velocity shape mismatch at parameter " + std::to_string(i));
    }
  }
  if (lr == 0.0) return;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->values();
    auto v = state.velocity[i].values();
    const auto g = grads[i].values();
    for (std::size_t j = 0; j < p.size(); ++j) {
      v[j] = state.momentum * v[j] + (g[j] + state.weight_decay * p[j]);
      p[j] -= lr * v[j];
    }
  }
  net.bump_version();
}

}  // namespace expertnet::nn
