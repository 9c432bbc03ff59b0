#pragma once

// Experiment configuration: a flat `key = value` text format.
//
//   # comment
//   schema_version = 1
//   dataset = blobs                 # or: table
//   blobs.classes = 4
//   noise.ratios = 0.2, 0.4         # lists are comma separated
//   methods = expertnet, plain-ce
//
// The full key list lives in README.md. Command-line overrides go through
// the same set_key() so both routes validate identically.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "expertnet/baselines.hpp"
#include "expertnet/data.hpp"
#include "expertnet/error.hpp"
#include "expertnet/expertnet.hpp"
#include "expertnet/noise.hpp"
#include "expertnet/training.hpp"

namespace expertnet::harness {

inline constexpr int kSchemaVersion = 1;

enum class Method { expertnet, plain_ce, bootstrap, forward };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::expertnet: return "expertnet";
    case Method::plain_ce: return "plain-ce";
    case Method::bootstrap: return "bootstrap";
    case Method::forward: return "forward";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  for (auto m : {Method::expertnet, Method::plain_ce, Method::bootstrap, Method::forward}) {
    if (s == to_string(m)) return m;
  }
  throw ConfigError("unknown method '" + s + "'");
}

enum class DatasetKind { blobs, table };

struct ExperimentConfig {
  DatasetKind dataset = DatasetKind::blobs;
  data::BlobSpec blobs;
  std::string table_path;
  std::string table_val_path;  // empty: split the training table
  data::TableSchema table_schema;
  double val_fraction = 0.2;

  std::vector<double> noise_ratios{0.2};
  std::string noise_matrix_path;  // non-empty: matrix noise instead of symmetric ratios
  std::vector<double> fractions{1.0};
  std::vector<Method> methods{Method::expertnet};
  std::vector<std::uint64_t> seeds{1};

  TrainOptions train{100, 64, {0.01, 0.1, 40}};
  OptimizerSettings optimizer;
  Architecture arch;
  /// Unset beta resolves to 0.8 (soft) or 0.95 (hard).
  std::optional<double> bootstrap_beta;
  baselines::BootstrapVariant bootstrap_variant = baselines::BootstrapVariant::soft;

  baselines::Bootstrap bootstrap() const {
    const double fallback = bootstrap_variant == baselines::BootstrapVariant::soft ? 0.8 : 0.95;
    return {bootstrap_beta.value_or(fallback), bootstrap_variant};
  }

  std::string output_dir = "results";
  std::size_t threads = 1;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

inline std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
    const auto n = std::stoull(v, &used, 0);
    if (used != v.size()) throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a nonnegative integer, got '" + v + "'");
  }
}

inline std::vector<std::size_t> parse_widths(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  if (trim(v) == "none") return out;
  for (const auto& item : split_list(v)) {
    const auto w = parse_u64(key, item);
    if (w == 0) throw ConfigError(key + ": layer widths must be positive");
    out.push_back(static_cast<std::size_t>(w));
  }
  return out;
}

}  // namespace detail

/// Applies one `key = value` assignment.
inline void set_key(ExperimentConfig& cfg, const std::string& raw_key, const std::string& raw_value) {
  using namespace detail;
  const std::string key = trim(raw_key);
  const std::string v = trim(raw_value);
  auto real = [&] { return parse_real(key, v); };
  auto count = [&] { return static_cast<std::size_t>(parse_u64(key, v)); };
  auto reals = [&] {
    std::vector<double> out;
    for (const auto& item : split_list(v)) out.push_back(parse_real(key, item));
    return out;
  };

  if (key == "schema_version") {
    if (parse_u64(key, v) != static_cast<std::uint64_t>(kSchemaVersion)) {
      throw ConfigError("unsupported schema_version " + v);
    }
  } else if (key == "dataset") {
    if (v == "blobs") cfg.dataset = DatasetKind::blobs;
    else if (v == "table") cfg.dataset = DatasetKind::table;
    else throw ConfigError("dataset must be 'blobs' or 'table'");
  } else if (key == "blobs.classes") {
    cfg.blobs.classes = count();
  } else if (key == "blobs.per_class") {
    cfg.blobs.per_class = count();
  } else if (key == "blobs.dim") {
    cfg.blobs.dim = count();
  } else if (key == "blobs.separation") {
    cfg.blobs.separation = real();
  } else if (key == "blobs.spread") {
    cfg.blobs.spread = real();
  } else if (key == "table.path") {
    cfg.table_path = v;
  } else if (key == "table.val_path") {
    cfg.table_val_path = v;
  } else if (key == "table.label_column") {
    cfg.table_schema.label_column = v;
  } else if (key == "table.feature_columns") {
    cfg.table_schema.feature_columns = split_list(v);
  } else if (key == "data.val_fraction") {
    cfg.val_fraction = real();
  } else if (key == "noise.ratios") {
    cfg.noise_ratios = reals();
  } else if (key == "noise.matrix") {
    cfg.noise_matrix_path = v;
  } else if (key == "fractions") {
    cfg.fractions = reals();
  } else if (key == "methods") {
    cfg.methods.clear();
    for (const auto& item : split_list(v)) cfg.methods.push_back(parse_method(item));
  } else if (key == "seeds") {
    cfg.seeds.clear();
    for (const auto& item : split_list(v)) cfg.seeds.push_back(parse_u64(key, item));
  } else if (key == "train.epochs") {
    cfg.train.epochs = count();
  } else if (key == "train.batch_size") {
    cfg.train.batch_size = count();
  } else if (key == "train.lr") {
    cfg.train.schedule.base_lr = real();
  } else if (key == "train.lr_decay_factor") {
    cfg.train.schedule.factor = real();
  } else if (key == "train.lr_decay_period") {
    cfg.train.schedule.period = count();
  } else if (key == "train.momentum") {
    cfg.optimizer.momentum = real();
  } else if (key == "train.weight_decay") {
    cfg.optimizer.weight_decay = real();
  } else if (key == "amateur.hidden") {
    cfg.arch.amateur_hidden = parse_widths(key, v);
  } else if (key == "expert.hidden") {
    cfg.arch.expert_hidden = parse_widths(key, v);
  } else if (key == "expert.terminal") {
    if (v == "softmax") cfg.arch.expert_terminal = ExpertTerminal::softmax;
    else if (v == "sigmoid") cfg.arch.expert_terminal = ExpertTerminal::sigmoid;
    else throw ConfigError("expert.terminal must be 'softmax' or 'sigmoid'");
  } else if (key == "expert.leaky_slope") {
    cfg.arch.leaky_slope = real();
  } else if (key == "bootstrap.beta") {
    cfg.bootstrap_beta = real();
  } else if (key == "bootstrap.variant") {
    if (v == "soft") cfg.bootstrap_variant = baselines::BootstrapVariant::soft;
    else if (v == "hard") cfg.bootstrap_variant = baselines::BootstrapVariant::hard;
    else throw ConfigError("bootstrap.variant must be 'soft' or 'hard'");
  } else if (key == "output") {
    cfg.output_dir = v;
  } else if (key == "threads") {
    cfg.threads = count();
  } else {
    throw ConfigError("unknown key '" + key + "'");
  }
}

/// Applies an override written as `key=value`.
inline void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' lacks '='");
  set_key(cfg, assignment.substr(0, eq), assignment.substr(eq + 1));
}

inline void validate(const ExperimentConfig& cfg) {
  if (cfg.noise_matrix_path.empty() && cfg.noise_ratios.empty()) {
    throw ConfigError("noise.ratios is empty");
  }
  for (double r : cfg.noise_ratios) {
    if (!(r >= 0.0 && r < 1.0)) throw ConfigError("noise ratios must lie in [0, 1)");
  }
  if (cfg.fractions.empty()) throw ConfigError("fractions is empty");
  for (double f : cfg.fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("fractions must lie in (0, 1]");
  }
  if (cfg.methods.empty()) throw ConfigError("methods is empty");
  if (cfg.seeds.empty()) throw ConfigError("seeds is empty");
  if (cfg.train.epochs == 0) throw ConfigError("train.epochs must be at least 1");
  if (cfg.train.batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (!(cfg.train.schedule.base_lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (!(cfg.train.schedule.factor > 0.0)) throw ConfigError("train.lr_decay_factor must be positive");
  if (!(cfg.optimizer.momentum >= 0.0 && cfg.optimizer.momentum < 1.0)) {
    throw ConfigError("train.momentum must lie in [0, 1)");
  }
  if (!(cfg.optimizer.weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be >= 0");
  if (!(cfg.arch.leaky_slope > 0.0 && cfg.arch.leaky_slope < 1.0)) {
    throw ConfigError("expert.leaky_slope must lie in (0, 1)");
  }
  if (const double beta = cfg.bootstrap().beta; !(beta > 0.0 && beta <= 1.0)) {
    throw ConfigError("bootstrap.beta must lie in (0, 1]");
  }
  if (!(cfg.val_fraction > 0.0 && cfg.val_fraction < 1.0)) {
    throw ConfigError("data.val_fraction must lie in (0, 1)");
  }
  if (cfg.dataset == DatasetKind::table && cfg.table_path.empty()) {
    throw ConfigError("dataset = table requires table.path");
  }
  if (cfg.threads == 0) throw ConfigError("threads must be at least 1");
}

inline ExperimentConfig parse_config(std::istream& in, const std::string& origin = "<config>") {
  ExperimentConfig cfg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (detail::trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    try {
      set_key(cfg, line.substr(0, eq), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      std::string what = e.what();
      const std::string prefix = "configuration error: ";
      if (what.rfind(prefix, 0) == 0) what.erase(0, prefix.size());
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + what);
    }
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return parse_config(in, path);
}

}  // namespace expertnet::harness
