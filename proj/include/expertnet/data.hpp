#pragma once

// Datasets of (x, y, t) triples: synthetic blobs, a delimited-table loader,
// splitting and subsampling.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "expertnet/error.hpp"
#include "expertnet/noise.hpp"
#include "expertnet/random.hpp"
#include "expertnet/tensor.hpp"

namespace expertnet::data {

/// One-hot vector of length k.
inline std::vector<double> one_hot(std::size_t label, std::size_t k) {
  if (label >= k) {
    throw DataError("label " + std::to_string(label) + " is outside [0, " + std::to_string(k) + ")");
  }
  std::vector<double> v(k, 0.0);
  v[label] = 1.0;
  return v;
}

/// Stacks one-hot rows for a label sequence.
inline Tensor one_hot_rows(const std::vector<std::size_t>& labels, std::size_t k) {
  Tensor t = Tensor::matrix(labels.size(), k);
  for (std::size_t n = 0; n < labels.size(); ++n) {
    if (labels[n] >= k) throw DataError("label out of range at row " + std::to_string(n));
    t(n, labels[n]) = 1.0;
  }
  return t;
}

class Dataset {
 public:
  Dataset(Tensor features, std::vector<std::size_t> true_labels, std::size_t classes,
          std::optional<std::vector<std::size_t>> given_labels = std::nullopt)
      : features_(std::move(features)),
        true_labels_(std::move(true_labels)),
        given_labels_(std::move(given_labels)),
        classes_(classes) {
    if (classes_ < 2) throw ConfigError("a dataset needs at least two classes");
    if (features_.rank() != 2 || features_.rows() != true_labels_.size()) {
      throw DataError("feature rows and true labels differ in count");
    }
    check_labels(true_labels_, "true");
    if (given_labels_) {
      if (given_labels_->size() != true_labels_.size()) {
        throw DataError("given labels and true labels differ in length");
      }
      check_labels(*given_labels_, "given");
    }
  }

  std::size_t size() const noexcept { return true_labels_.size(); }
  std::size_t classes() const noexcept { return classes_; }
  std::size_t dim() const { return features_.cols(); }
  const Tensor& features() const noexcept { return features_; }
  const std::vector<std::size_t>& true_labels() const noexcept { return true_labels_; }
  bool has_given_labels() const noexcept { return given_labels_.has_value(); }

  const std::vector<std::size_t>& given_labels() const {
    if (!given_labels_) throw DataError("dataset has no given labels yet");
    return *given_labels_;
  }

  /// New dataset carrying `given` as its given labels.
  Dataset with_given_labels(std::vector<std::size_t> given) const {
    return Dataset(features_, true_labels_, classes_, std::move(given));
  }

  /// New dataset whose given labels are drawn through `matrix`.
  Dataset with_noise(const noise::TransitionMatrix& matrix, std::uint64_t seed) const {
    if (matrix.classes() != classes_) throw DimensionError("noise matrix class count mismatch");
    return with_given_labels(noise::corrupt_labels(true_labels_, matrix, seed));
  }

  /// Rows at `indices`, in that order.
  Dataset select(std::span<const std::size_t> indices) const {
    std::vector<std::size_t> t;
    std::optional<std::vector<std::size_t>> y;
    t.reserve(indices.size());
    if (given_labels_) y.emplace().reserve(indices.size());
    for (std::size_t i : indices) {
      if (i >= size()) throw DataError("selection index out of range");
      t.push_back(true_labels_[i]);
      if (y) y->push_back((*given_labels_)[i]);
    }
    return Dataset(gather_rows(features_, indices), std::move(t), classes_, std::move(y));
  }

  /// FNV-1a over dims, feature bytes, true labels and given labels.
  std::uint64_t content_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](const void* p, std::size_t n) {
      const auto* bytes = static_cast<const unsigned char*>(p);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ULL;
      }
    };
    auto feed_u64 = [&](std::uint64_t v) { feed(&v, sizeof v); };
    feed_u64(size());
    feed_u64(dim());
    feed_u64(classes_);
    feed(features_.data().data(), features_.size() * sizeof(double));
    for (std::size_t t : true_labels_) feed_u64(t);
    feed_u64(given_labels_ ? 1 : 0);
    if (given_labels_) {
      for (std::size_t y : *given_labels_) feed_u64(y);
    }
    return h;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;

 private:
  void check_labels(const std::vector<std::size_t>& labels, const char* which) const {
    for (std::size_t n = 0; n < labels.size(); ++n) {
      if (labels[n] >= classes_) {
        throw DataError(std::string(which) + " label " + std::to_string(labels[n]) + " at row " +
                        std::to_string(n) + " is outside [0, " + std::to_string(classes_) + ")");
      }
    }
  }

  Tensor features_;
  std::vector<std::size_t> true_labels_;
  std::optional<std::vector<std::size_t>> given_labels_;
  std::size_t classes_;
};

// ---------------------------------------------------------------------------
// Synthetic Gaussian blobs

struct BlobSpec {
  std::size_t classes = 4;
  std::size_t per_class = 500;
  std::size_t dim = 16;
  double separation = 6.0;
  double spread = 1.0;
};

struct Blobs {
  Dataset dataset;
  Tensor centers;  // classes x dim
};

/// Centers: when K <= dim, a regular simplex (every pair exactly
/// `separation` apart) expressed in a seeded random orthonormal basis;
/// otherwise standard-normal draws rescaled so the closest pair is
/// `separation` apart. Points: center + spread * N(0, I). Rows are grouped
/// by class (class 0 first).
inline Blobs make_blobs_with_centers(const BlobSpec& spec, std::uint64_t seed) {
  if (spec.classes < 2) throw ConfigError("make_blobs needs K >= 2");
  if (spec.per_class < 1) throw ConfigError("make_blobs needs per_class >= 1");
  if (spec.dim < 1) throw ConfigError("make_blobs needs dim >= 1");
  if (!(spec.separation > 0.0) || !(spec.spread >= 0.0)) {
    throw ConfigError("make_blobs needs positive separation and nonnegative spread");
  }
  const std::size_t k = spec.classes;
  const std::size_t d = spec.dim;
  Rng center_rng(derive_seed(seed, {0}));
  Tensor centers = Tensor::matrix(k, d);
  if (k <= d) {
    // Gram-Schmidt on Gaussian draws; redraw on (measure-zero) degeneracy.
    Tensor basis = Tensor::matrix(k, d);
    for (std::size_t i = 0; i < k; ++i) {
      auto q = basis.row(i);
      double norm = 0.0;
      do {
        for (double& v : q) v = center_rng.normal();
        for (std::size_t p = 0; p < i; ++p) {
          const auto prev = basis.row(p);
          double dot = 0.0;
          for (std::size_t j = 0; j < d; ++j) dot += q[j] * prev[j];
          for (std::size_t j = 0; j < d; ++j) q[j] -= dot * prev[j];
        }
        norm = 0.0;
        for (double v : q) norm += v * v;
        norm = std::sqrt(norm);
      } while (!(norm > 1e-8));
      for (double& v : q) v /= norm;
    }
    // c_i = (separation / sqrt 2) * sum_p (delta_ip - 1/K) q_p
    const double scale = spec.separation / std::sqrt(2.0);
    const double inv_k = 1.0 / static_cast<double>(k);
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double coeff = scale * ((i == p ? 1.0 : 0.0) - inv_k);
        for (std::size_t j = 0; j < d; ++j) centers(i, j) += coeff * basis(p, j);
      }
    }
  } else {
    double closest = 0.0;
    do {
      for (double& c : centers.values()) c = center_rng.normal();
      closest = std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < k; ++a) {
        for (std::size_t b = a + 1; b < k; ++b) {
          double d2 = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double diff = centers(a, j) - centers(b, j);
            d2 += diff * diff;
          }
          closest = std::min(closest, std::sqrt(d2));
        }
      }
    } while (!(closest > 0.0));
    const double scale = spec.separation / closest;
    for (double& c : centers.values()) c *= scale;
  }

  Rng point_rng(derive_seed(seed, {1}));
  const std::size_t n = spec.classes * spec.per_class;
  Tensor x = Tensor::matrix(n, spec.dim);
  std::vector<std::size_t> labels(n);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    for (std::size_t i = 0; i < spec.per_class; ++i) {
      const std::size_t r = c * spec.per_class + i;
      labels[r] = c;
      for (std::size_t j = 0; j < spec.dim; ++j) {
        x(r, j) = centers(c, j) + spec.spread * point_rng.normal();
      }
    }
  }
  return {Dataset(std::move(x), std::move(labels), spec.classes), std::move(centers)};
}

inline Dataset make_blobs(const BlobSpec& spec, std::uint64_t seed) {
  return make_blobs_with_centers(spec, seed).dataset;
}

// ---------------------------------------------------------------------------
// Splitting and subsampling

/// Uniform subset without replacement of size round(fraction * N); parent order kept.
inline Dataset subsample(const Dataset& ds, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("fraction must lie in (0, 1]");
  const auto keep = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(ds.size())));
  if (keep == 0) throw ConfigError("subsample would be empty");
  if (keep == ds.size()) return ds;
  std::vector<std::size_t> order(ds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  order.resize(keep);
  std::sort(order.begin(), order.end());
  return ds.select(order);
}

struct Split {
  Dataset train;
  Dataset validation;
};

/// Uniform random train/validation partition; both parts keep parent order.
inline Split split(const Dataset& ds, double validation_fraction, std::uint64_t seed) {
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("validation fraction must lie in (0, 1)");
  }
  const auto n_val = static_cast<std::size_t>(
      std::llround(validation_fraction * static_cast<double>(ds.size())));
  if (n_val == 0 || n_val == ds.size()) throw ConfigError("split leaves one side empty");
  std::vector<std::size_t> order(ds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return {ds.select(train), ds.select(val)};
}

// ---------------------------------------------------------------------------
// Delimited tables
//
// Comma separated, header row, decimal feature columns, one label column
// holding strings or integers.

struct TableSchema {
  std::string label_column = "label";
  /// Empty means every column except the label column.
  std::vector<std::string> feature_columns;
};

/// Normalization statistics and label mapping, fitted on a training table
/// and reused for validation tables.
struct TableStats {
  std::vector<std::string> feature_columns;
  std::vector<double> mean;
  std::vector<double> stdev;  // population stdev; constant columns keep 0
  std::vector<std::string> labels;  // dense index -> original label

  std::size_t label_index(const std::string& label) const {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == label) return i;
    }
    throw DataError("label '" + label + "' was not seen in the training table");
  }
};

struct Table {
  Dataset dataset;
  TableStats stats;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    const auto first = cell.find_first_not_of(" \t");
    const auto last = cell.find_last_not_of(" \t");
    cells.push_back(first == std::string::npos ? std::string() : cell.substr(first, last - first + 1));
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline bool is_integer(const std::string& s) {
  if (s.empty()) return false;
  std::size_t start = (s[0] == '-' || s[0] == '+') ? 1 : 0;
  if (start == s.size()) return false;
  return std::all_of(s.begin() + static_cast<std::ptrdiff_t>(start), s.end(),
                     [](char c) { return c >= '0' && c <= '9'; });
}

struct RawTable {
  std::vector<std::string> feature_columns;
  std::vector<std::vector<double>> rows;
  std::vector<std::string> labels;
};

inline RawTable read_raw(std::istream& in, const TableSchema& schema, const std::string& origin) {
  std::string line;
  std::size_t line_no = 0;
  auto next_line = [&]() -> bool {
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.find_first_not_of(" \t") != std::string::npos) return true;
    }
    return false;
  };
  if (!next_line()) throw InputError(origin + ": missing header row");
  const auto header = split_csv_line(line);
  std::optional<std::size_t> label_col;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == schema.label_column) label_col = i;
  }
  if (!label_col) {
    throw InputError(origin + ":" + std::to_string(line_no) + ": no label column '" +
                     schema.label_column + "'");
  }
  std::vector<std::size_t> feature_idx;
  RawTable raw;
  if (schema.feature_columns.empty()) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (i != *label_col) {
        feature_idx.push_back(i);
        raw.feature_columns.push_back(header[i]);
      }
    }
  } else {
    for (const auto& name : schema.feature_columns) {
      const auto it = std::find(header.begin(), header.end(), name);
      if (it == header.end()) {
        throw InputError(origin + ":" + std::to_string(line_no) + ": no feature column '" + name + "'");
      }
      feature_idx.push_back(static_cast<std::size_t>(it - header.begin()));
      raw.feature_columns.push_back(name);
    }
  }
  if (feature_idx.empty()) throw InputError(origin + ": no feature columns");

  while (next_line()) {
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw InputError(origin + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(header.size()) + " fields, found " +
                       std::to_string(cells.size()));
    }
    std::vector<double> row;
    row.reserve(feature_idx.size());
    for (std::size_t idx : feature_idx) {
      const std::string& cell = cells[idx];
      double value = 0.0;
      try {
        std::size_t used = 0;
        value = std::stod(cell, &used);
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw InputError(origin + ":" + std::to_string(line_no) + ": column '" + header[idx] +
                         "' is not a number: '" + cell + "'");
      }
      if (!std::isfinite(value)) {
        throw InputError(origin + ":" + std::to_string(line_no) + ": non-finite value");
      }
      row.push_back(value);
    }
    if (cells[*label_col].empty()) {
      throw InputError(origin + ":" + std::to_string(line_no) + ": empty label");
    }
    raw.rows.push_back(std::move(row));
    raw.labels.push_back(cells[*label_col]);
  }
  if (raw.rows.empty()) throw InputError(origin + ": table has no data rows");
  return raw;
}

inline Table finish(const RawTable& raw, TableStats stats) {
  const std::size_t n = raw.rows.size();
  const std::size_t d = stats.feature_columns.size();
  Tensor x = Tensor::matrix(n, d);
  std::vector<std::size_t> labels(n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < d; ++j) {
      const double centered = raw.rows[r][j] - stats.mean[j];
      x(r, j) = stats.stdev[j] > 0.0 ? centered / stats.stdev[j] : 0.0;
    }
    labels[r] = stats.label_index(raw.labels[r]);
  }
  const std::size_t k = std::max<std::size_t>(stats.labels.size(), 2);
  return {Dataset(std::move(x), std::move(labels), k), std::move(stats)};
}

}  // namespace detail

/// Constant columns (stdev below this) normalize to zero.
inline constexpr double kVarianceClamp = 1e-12;

/// Reads a training table; fits normalization and label mapping on it.
/// Integer labels map in numeric order, anything else in lexicographic order.
inline Table load_table(std::istream& in, const TableSchema& schema,
                        const std::string& origin = "<stream>") {
  const auto raw = detail::read_raw(in, schema, origin);
  TableStats stats;
  stats.feature_columns = raw.feature_columns;
  const std::size_t n = raw.rows.size();
  const std::size_t d = raw.feature_columns.size();
  stats.mean.assign(d, 0.0);
  stats.stdev.assign(d, 0.0);
  for (const auto& row : raw.rows) {
    for (std::size_t j = 0; j < d; ++j) stats.mean[j] += row[j];
  }
  for (double& m : stats.mean) m /= static_cast<double>(n);
  for (const auto& row : raw.rows) {
    for (std::size_t j = 0; j < d; ++j) {
      const double c = row[j] - stats.mean[j];
      stats.stdev[j] += c * c;
    }
  }
  for (double& s : stats.stdev) {
    s = std::sqrt(s / static_cast<double>(n));
    if (s < kVarianceClamp) s = 0.0;
  }

  stats.labels = raw.labels;
  std::sort(stats.labels.begin(), stats.labels.end());
  stats.labels.erase(std::unique(stats.labels.begin(), stats.labels.end()), stats.labels.end());
  if (std::all_of(stats.labels.begin(), stats.labels.end(), detail::is_integer)) {
    std::sort(stats.labels.begin(), stats.labels.end(),
              [](const std::string& a, const std::string& b) { return std::stoll(a) < std::stoll(b); });
  }
  if (stats.labels.size() < 2) throw DataError(origin + ": table has fewer than two classes");
  return detail::finish(raw, std::move(stats));
}

/// Reads a validation table with statistics fitted on the training table.
inline Table load_table(std::istream& in, const TableSchema& schema, const TableStats& fitted,
                        const std::string& origin = "<stream>") {
  TableSchema pinned = schema;
  pinned.feature_columns = fitted.feature_columns;
  const auto raw = detail::read_raw(in, pinned, origin);
  return detail::finish(raw, fitted);
}

inline Table load_table(const std::string& path, const TableSchema& schema) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return load_table(in, schema, path);
}

inline Table load_table(const std::string& path, const TableSchema& schema,
                        const TableStats& fitted) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return load_table(in, schema, fitted, path);
}

}  // namespace expertnet::data
