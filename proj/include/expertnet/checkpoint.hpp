#pragma once

// Text checkpoint for a trained ExpertNet model (inference state only).
//
//   expertnet-checkpoint 1
//   classes <K>
//   network amateur <input_dim> <layer_count>
//   dense <in> <out>
//   <out lines of <in> weights>
//   <1 line of <out> biases>
//   activation <relu|leaky_relu|sigmoid|softmax|normalize> [slope]
//   ...
//   network expert <input_dim> <layer_count>
//   ...
//   end
//
// Reals are written with 17 significant digits, so a save/load round trip
// reproduces every parameter bit for bit.

#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "expertnet/error.hpp"
#include "expertnet/expertnet.hpp"
#include "expertnet/nn.hpp"

namespace expertnet::checkpoint {

inline constexpr int kFormatVersion = 1;

namespace detail {

inline void write_reals(std::ostream& out, std::span<const double> values) {
  char buf[32];
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", values[i]);
    if (i) out << ' ';
    out << buf;
  }
  out << '\n';
}

inline void write_network(std::ostream& out, const std::string& name, const nn::Network& net) {
  out << "network " << name << ' ' << net.input_dim() << ' ' << net.layers().size() << '\n';
  for (const auto& layer : net.layers()) {
    if (const auto* d = std::get_if<nn::Dense>(&layer)) {
      out << "dense " << d->in() << ' ' << d->out() << '\n';
      for (std::size_t o = 0; o < d->out(); ++o) write_reals(out, d->weight.row(o));
      write_reals(out, d->bias.values());
    } else {
      const auto& a = std::get<nn::Activation>(layer);
      out << "activation " << nn::to_string(a.kind);
      if (a.kind == nn::ActivationKind::leaky_relu) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", a.slope);
        out << ' ' << buf;
      }
      out << '\n';
    }
  }
}

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  std::string word() {
    std::string w;
    if (!(in_ >> w)) throw InputError("checkpoint truncated");
    return w;
  }

  void expect(const std::string& keyword) {
    const std::string w = word();
    if (w != keyword) throw InputError("checkpoint: expected '" + keyword + "', found '" + w + "'");
  }

  std::size_t count() {
    const std::string w = word();
    try {
      std::size_t used = 0;
      const auto v = std::stoull(w, &used);
      if (used != w.size()) throw std::invalid_argument(w);
      return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      throw InputError("checkpoint: expected an integer, found '" + w + "'");
    }
  }

  double real() {
    const std::string w = word();
    try {
      std::size_t used = 0;
      const double v = std::stod(w, &used);
      if (used != w.size()) throw std::invalid_argument(w);
      return v;
    } catch (const std::exception&) {
      throw InputError("checkpoint: expected a number, found '" + w + "'");
    }
  }

 private:
  std::istream& in_;
};

inline nn::ActivationKind parse_activation(const std::string& name) {
  for (auto kind : {nn::ActivationKind::relu, nn::ActivationKind::leaky_relu,
                    nn::ActivationKind::sigmoid, nn::ActivationKind::softmax,
                    nn::ActivationKind::normalize}) {
    if (name == nn::to_string(kind)) return kind;
  }
  throw InputError("checkpoint: unknown activation '" + name + "'");
}

inline nn::Network read_network(Reader& r, const std::string& name) {
  r.expect("network");
  r.expect(name);
  const std::size_t input_dim = r.count();
  const std::size_t layer_count = r.count();
  std::vector<nn::Layer> layers;
  for (std::size_t l = 0; l < layer_count; ++l) {
    const std::string kind = r.word();
    if (kind == "dense") {
      const std::size_t in = r.count();
      const std::size_t out = r.count();
      if (in == 0 || out == 0) throw InputError("checkpoint: zero-sized dense layer");
      nn::Dense d{Tensor::matrix(out, in), Tensor({out})};
      for (double& w : d.weight.values()) w = r.real();
      for (double& b : d.bias.values()) b = r.real();
      layers.emplace_back(std::move(d));
    } else if (kind == "activation") {
      nn::Activation a{parse_activation(r.word())};
      if (a.kind == nn::ActivationKind::leaky_relu) a.slope = r.real();
      layers.emplace_back(a);
    } else {
      throw InputError("checkpoint: unknown layer kind '" + kind + "'");
    }
  }
  return nn::Network(input_dim, std::move(layers));
}

}  // namespace detail

inline void write(std::ostream& out, const ExpertNetModel& model) {
  out << "expertnet-checkpoint " << kFormatVersion << '\n';
  out << "classes " << model.classes() << '\n';
  detail::write_network(out, "amateur", model.amateur);
  detail::write_network(out, "expert", model.expert);
  out << "end\n";
}

/// Optimizer state is not stored; the loaded model gets fresh velocities
/// with the given settings.
inline ExpertNetModel read(std::istream& in, const OptimizerSettings& settings = {}) {
  detail::Reader r(in);
  r.expect("expertnet-checkpoint");
  if (const auto v = r.count(); v != static_cast<std::size_t>(kFormatVersion)) {
    throw InputError("checkpoint: unsupported format version " + std::to_string(v));
  }
  r.expect("classes");
  const std::size_t k = r.count();
  nn::Network amateur = detail::read_network(r, "amateur");
  nn::Network expert = detail::read_network(r, "expert");
  r.expect("end");
  auto amateur_opt =
      nn::OptimizerState::for_network(amateur, settings.momentum, settings.weight_decay, {});
  auto expert_opt =
      nn::OptimizerState::for_network(expert, settings.momentum, settings.weight_decay, {});
  ExpertNetModel model{std::move(amateur), std::move(expert), std::move(amateur_opt),
                       std::move(expert_opt)};
  if (model.classes() != k) throw InputError("checkpoint: class count does not match networks");
  model.validate();
  return model;
}

inline void save(const ExpertNetModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  write(out, model);
  if (!out) throw IoError("failed writing " + path);
}

inline ExpertNetModel load(const std::string& path, const OptimizerSettings& settings = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return read(in, settings);
}

}  // namespace expertnet::checkpoint
