#pragma once

// Label-noise models: transition matrices, seeded corruption of label
// sequences, and empirical transition estimates.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "expertnet/error.hpp"
#include "expertnet/random.hpp"
#include "expertnet/tensor.hpp"

namespace expertnet::noise {

inline constexpr double kRowSumTolerance = 1e-9;

/// Row-stochastic K x K matrix, entry (i, j) = P(given = j | true = i).
class TransitionMatrix {
 public:
  explicit TransitionMatrix(Tensor entries) : entries_(std::move(entries)) {
    if (entries_.rank() != 2 || entries_.rows() != entries_.cols()) {
      throw DimensionError("transition matrix must be square");
    }
    if (entries_.rows() < 2) throw ConfigError("transition matrix needs at least two classes");
    for (std::size_t i = 0; i < classes(); ++i) {
      double total = 0.0;
      for (double p : entries_.row(i)) {
        if (!(p >= 0.0 && p <= 1.0)) {
          throw DataError("transition matrix row " + std::to_string(i) +
                          " has an entry outside [0, 1]");
        }
        total += p;
      }
      if (std::abs(total - 1.0) > kRowSumTolerance) {
        throw DataError("transition matrix row " + std::to_string(i) + " sums to " +
                        std::to_string(total));
      }
    }
  }

  static TransitionMatrix identity(std::size_t k) {
    Tensor t = Tensor::matrix(k, k);
    for (std::size_t i = 0; i < k; ++i) t(i, i) = 1.0;
    return TransitionMatrix(std::move(t));
  }

  std::size_t classes() const { return entries_.rows(); }
  double operator()(std::size_t true_class, std::size_t given_class) const {
    return entries_(true_class, given_class);
  }
  std::span<const double> row(std::size_t true_class) const { return entries_.row(true_class); }
  const Tensor& tensor() const noexcept { return entries_; }

  /// Mean off-diagonal mass, i.e. the expected flip rate under balanced classes.
  double mean_flip_rate() const {
    double diag = 0.0;
    for (std::size_t i = 0; i < classes(); ++i) diag += entries_(i, i);
    return 1.0 - diag / static_cast<double>(classes());
  }

  friend bool operator==(const TransitionMatrix&, const TransitionMatrix&) = default;

 private:
  Tensor entries_;
};

/// Diagonal 1 - ratio, every off-diagonal entry ratio / (K - 1).
inline TransitionMatrix symmetric_matrix(std::size_t k, double ratio) {
  if (k < 2) throw ConfigError("symmetric noise needs K >= 2");
  if (!(ratio >= 0.0 && ratio < 1.0)) throw ConfigError("noise ratio must lie in [0, 1)");
  Tensor t = Tensor::matrix(k, k, ratio / static_cast<double>(k - 1));
  for (std::size_t i = 0; i < k; ++i) t(i, i) = 1.0 - ratio;
  return TransitionMatrix(std::move(t));
}

struct Symmetric {
  std::size_t classes = 2;
  double ratio = 0.0;
};

struct NoiseSpec {
  std::variant<Symmetric, TransitionMatrix> kind;
  std::uint64_t seed = 0;

  TransitionMatrix matrix() const {
    if (const auto* s = std::get_if<Symmetric>(&kind)) return symmetric_matrix(s->classes, s->ratio);
    return std::get<TransitionMatrix>(kind);
  }
};

/// Each label is replaced by a draw from the matrix row of its true class.
/// One uniform per sample, consumed in input order.
inline std::vector<std::size_t> corrupt_labels(const std::vector<std::size_t>& true_labels,
                                               const TransitionMatrix& matrix,
                                               std::uint64_t seed) {
  const std::size_t k = matrix.classes();
  Rng rng(seed);
  std::vector<std::size_t> given;
  given.reserve(true_labels.size());
  for (std::size_t n = 0; n < true_labels.size(); ++n) {
    const std::size_t c = true_labels[n];
    if (c >= k) {
      throw DataError("label " + std::to_string(c) + " at position " + std::to_string(n) +
                      " is outside [0, " + std::to_string(k) + ")");
    }
    const auto row = matrix.row(c);
    const double u = rng.uniform();
    double cumulative = 0.0;
    std::size_t pick = k;
    std::size_t last_positive = c;
    for (std::size_t j = 0; j < k; ++j) {
      if (row[j] > 0.0) last_positive = j;
      cumulative += row[j];
      if (u < cumulative) {
        pick = j;
        break;
      }
    }
    // Rounding can leave the cumulative sum a hair below one.
    given.push_back(pick == k ? last_positive : pick);
  }
  return given;
}

inline std::vector<std::size_t> corrupt_labels(const std::vector<std::size_t>& true_labels,
                                               const NoiseSpec& spec) {
  return corrupt_labels(true_labels, spec.matrix(), spec.seed);
}

struct EmpiricalMatrix {
  TransitionMatrix matrix;
  /// Classes with no true-label support; their rows are uniform.
  std::vector<std::size_t> unsupported_rows;
};

inline EmpiricalMatrix empirical_matrix(const std::vector<std::size_t>& true_labels,
                                        const std::vector<std::size_t>& given_labels,
                                        std::size_t k) {
  if (true_labels.size() != given_labels.size()) {
    throw DataError("true and given label sequences differ in length");
  }
  if (k < 2) throw ConfigError("empirical matrix needs K >= 2");
  std::vector<std::vector<std::size_t>> counts(k, std::vector<std::size_t>(k, 0));
  std::vector<std::size_t> support(k, 0);
  for (std::size_t n = 0; n < true_labels.size(); ++n) {
    if (true_labels[n] >= k || given_labels[n] >= k) {
      throw DataError("label out of range at position " + std::to_string(n));
    }
    ++counts[true_labels[n]][given_labels[n]];
    ++support[true_labels[n]];
  }
  Tensor t = Tensor::matrix(k, k);
  std::vector<std::size_t> unsupported;
  for (std::size_t i = 0; i < k; ++i) {
    if (support[i] == 0) {
      unsupported.push_back(i);
      for (double& v : t.row(i)) v = 1.0 / static_cast<double>(k);
      continue;
    }
    for (std::size_t j = 0; j < k; ++j) {
      t(i, j) = static_cast<double>(counts[i][j]) / static_cast<double>(support[i]);
    }
  }
  return {TransitionMatrix(std::move(t)), std::move(unsupported)};
}

// ---------------------------------------------------------------------------
// CSV: K lines of K comma-separated decimals, no header.

inline std::string to_csv(const TransitionMatrix& m) {
  std::string out;
  char buf[32];
  for (std::size_t i = 0; i < m.classes(); ++i) {
    for (std::size_t j = 0; j < m.classes(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", m(i, j));
      if (j) out += ',';
      out += buf;
    }
    out += '\n';
  }
  return out;
}

inline TransitionMatrix parse_csv(std::istream& in, const std::string& origin = "<stream>") {
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        if (cell.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw InputError(origin + ":" + std::to_string(line_no) + ": cannot parse '" + cell + "'");
      }
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw InputError(origin + ": empty transition matrix");
  for (const auto& r : rows) {
    if (r.size() != rows.size()) throw InputError(origin + ": transition matrix is not square");
  }
  return TransitionMatrix(Tensor::from_rows(rows));
}

inline TransitionMatrix load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return parse_csv(in, path);
}

inline void save_csv(const TransitionMatrix& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << to_csv(m);
  if (!out) throw IoError("failed writing " + path);
}

}  // namespace expertnet::noise
