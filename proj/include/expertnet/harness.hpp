#pragma once

// Grid runner and report writer.
//
// A grid cell is (noise ratio, data fraction, master seed). Every method in
// a cell trains on the same (x, y, t) triples with the same batch order;
// only the weight initialization stream depends on the method. Derived
// seeds:
//
//   base dataset   derive(master, {kData})
//   train/val cut  derive(master, {kSplit})
//   subsample      derive(master, {kSubsample, fraction})
//   train noise    derive(master, {kTrainNoise, ratio, fraction})
//   val noise      derive(master, {kValNoise, ratio})
//   batch order    derive(master, {kBatches, ratio, fraction})
//   weight init    derive(master, {kInit, ratio, fraction, fnv(method name)})

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "expertnet/baselines.hpp"
#include "expertnet/checkpoint.hpp"
#include "expertnet/config.hpp"
#include "expertnet/data.hpp"
#include "expertnet/error.hpp"
#include "expertnet/expertnet.hpp"
#include "expertnet/noise.hpp"
#include "expertnet/random.hpp"
#include "expertnet/training.hpp"

namespace expertnet::harness {

enum class Mode { amateur_only, full };

inline const char* to_string(Mode m) { return m == Mode::amateur_only ? "amateur-only" : "full"; }

struct ResultRecord {
  Method method = Method::expertnet;
  Mode mode = Mode::amateur_only;
  double noise_ratio = 0.0;
  double fraction = 1.0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  double wall_seconds = 0.0;
  std::size_t epochs = 0;
  std::uint64_t dataset_hash = 0;
  bool failed = false;
  std::string diagnostic;
};

namespace seeds {
inline constexpr std::uint64_t kData = 1;
inline constexpr std::uint64_t kSplit = 2;
inline constexpr std::uint64_t kSubsample = 3;
inline constexpr std::uint64_t kTrainNoise = 4;
inline constexpr std::uint64_t kValNoise = 5;
inline constexpr std::uint64_t kBatches = 6;
inline constexpr std::uint64_t kInit = 7;

inline std::uint64_t name_tag(const std::string& name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}
}  // namespace seeds

/// Train/validation pair before noise injection and subsampling.
struct BaseData {
  data::Dataset train;
  data::Dataset validation;
};

/// Noise model for one grid ratio.
struct NoiseModel {
  double ratio = 0.0;  // nominal flip rate reported in records
  noise::TransitionMatrix matrix;
};

/// Fully prepared inputs of one cell; identical for every method.
struct CellData {
  data::Dataset train;
  data::Dataset validation;
  noise::TransitionMatrix matrix;
  std::uint64_t batch_seed = 0;

  std::uint64_t hash() const { return train.content_hash() ^ mix64(validation.content_hash()); }
};

/// Table input read once per grid. With a separate validation file both
/// splits are final; otherwise the raw data lines are kept so each master
/// seed can split them and fit normalization on its training rows only.
struct TableInput {
  std::optional<BaseData> fixed;
  std::string header;
  std::vector<std::string> lines;
};

inline TableInput load_table_input(const ExperimentConfig& cfg) {
  TableInput input;
  if (!cfg.table_val_path.empty()) {
    auto train_table = data::load_table(cfg.table_path, cfg.table_schema);
    auto val_table = data::load_table(cfg.table_val_path, cfg.table_schema, train_table.stats);
    input.fixed = BaseData{std::move(train_table.dataset), std::move(val_table.dataset)};
    return input;
  }
  std::ifstream in(cfg.table_path);
  if (!in) throw IoError("cannot open " + cfg.table_path);
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (!have_header) {
      input.header = line;
      have_header = true;
    } else {
      input.lines.push_back(line);
    }
  }
  if (!have_header) throw InputError(cfg.table_path + ": missing header row");
  return input;
}

/// Loads or generates the base train/validation split for a master seed.
inline BaseData base_data(const ExperimentConfig& cfg, std::uint64_t master,
                          const std::optional<TableInput>& table) {
  if (cfg.dataset == DatasetKind::table) {
    if (!table) throw ConfigError("table dataset not loaded");
    if (table->fixed) return *table->fixed;
    const std::size_t n = table->lines.size();
    const auto n_val = static_cast<std::size_t>(std::llround(cfg.val_fraction * static_cast<double>(n)));
    if (n_val == 0 || n_val == n) throw ConfigError("table too small for data.val_fraction");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(master, {seeds::kSplit}));
    rng.shuffle(std::span<std::size_t>(order));
    std::vector<bool> is_val(n, false);
    for (std::size_t i = 0; i < n_val; ++i) is_val[order[i]] = true;
    std::string train_text = table->header + '\n';
    std::string val_text = table->header + '\n';
    for (std::size_t i = 0; i < n; ++i) (is_val[i] ? val_text : train_text) += table->lines[i] + '\n';
    std::istringstream train_in(train_text), val_in(val_text);
    auto train_table = data::load_table(train_in, cfg.table_schema, cfg.table_path + " (train split)");
    auto val_table =
        data::load_table(val_in, cfg.table_schema, train_table.stats, cfg.table_path + " (validation split)");
    return {std::move(train_table.dataset), std::move(val_table.dataset)};
  }
  const auto all = data::make_blobs(cfg.blobs, derive_seed(master, {seeds::kData}));
  auto parts = data::split(all, cfg.val_fraction, derive_seed(master, {seeds::kSplit}));
  return {std::move(parts.train), std::move(parts.validation)};
}

inline CellData cell_data(const BaseData& base, const NoiseModel& noise_model, double fraction,
                          std::uint64_t master) {
  const auto ratio_tag = real_tag(noise_model.ratio);
  const auto fraction_tag = real_tag(fraction);
  // Subsample first so the nominal noise rate holds on the subset.
  const auto subset =
      data::subsample(base.train, fraction, derive_seed(master, {seeds::kSubsample, fraction_tag}));
  return {subset.with_noise(noise_model.matrix,
                            derive_seed(master, {seeds::kTrainNoise, ratio_tag, fraction_tag})),
          base.validation.with_noise(noise_model.matrix,
                                     derive_seed(master, {seeds::kValNoise, ratio_tag})),
          noise_model.matrix, derive_seed(master, {seeds::kBatches, ratio_tag, fraction_tag})};
}

inline std::uint64_t init_seed(std::uint64_t master, double ratio, double fraction, Method method) {
  return derive_seed(master, {seeds::kInit, real_tag(ratio), real_tag(fraction),
                              seeds::name_tag(to_string(method))});
}

struct CellOutcome {
  std::vector<ResultRecord> records;
  std::string log;
  std::optional<ExpertNetModel> model;  // ExpertNet only
};

namespace detail {

inline std::string format_epoch(const EpochRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "  epoch %zu lr %.6g loss_amateur %.6f loss_expert %s val_amateur %.4f val_full %s\n",
                r.epoch, r.lr, r.amateur_loss,
                r.expert_loss ? std::to_string(*r.expert_loss).c_str() : "-",
                r.val_amateur_accuracy,
                r.val_full_accuracy ? std::to_string(*r.val_full_accuracy).c_str() : "-");
  return buf;
}

inline std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace detail

/// Trains one method on one prepared cell.
inline CellOutcome run_cell(const ExperimentConfig& cfg, const CellData& cell, double ratio,
                            double fraction, std::uint64_t master, Method method) {
  CellOutcome out;
  ResultRecord proto;
  proto.method = method;
  proto.noise_ratio = ratio;
  proto.fraction = fraction;
  proto.seed = master;
  proto.dataset_hash = cell.hash();
  std::ostringstream log;
  log << "cell method=" << to_string(method) << " ratio=" << ratio << " fraction=" << fraction
      << " seed=" << master << " dataset_hash=" << detail::hex64(proto.dataset_hash)
      << " train=" << cell.train.size() << " val=" << cell.validation.size() << '\n';

  TrainObserver observer;
  observer.on_epoch = [&log](const EpochRecord& r) { log << detail::format_epoch(r); };

  const auto start = std::chrono::steady_clock::now();
  const std::size_t dim = cell.train.dim();
  const std::size_t k = cell.train.classes();
  const std::uint64_t init = init_seed(master, ratio, fraction, method);
  TrainHistory history;
  if (method == Method::expertnet) {
    auto model = ExpertNetModel::create(dim, k, cfg.arch, cfg.optimizer, init);
    history = train(model, cell.train, cell.validation, cfg.train, cell.batch_seed, &observer);
    out.model = std::move(model);
  } else {
    baselines::BaselineSpec spec = baselines::PlainCrossEntropy{};
    if (method == Method::bootstrap) spec = cfg.bootstrap();
    if (method == Method::forward) spec = baselines::Forward{cell.matrix};
    auto model = baselines::BaselineModel::create(dim, k, cfg.arch, cfg.optimizer, init);
    history = baselines::train_baseline(spec, model, cell.train, cell.validation, cfg.train,
                                        cell.batch_seed, &observer);
  }
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  const EpochRecord& last = history.epochs.back();
  proto.epochs = history.epochs.size();
  proto.wall_seconds = seconds;
  ResultRecord amateur = proto;
  amateur.mode = Mode::amateur_only;
  amateur.accuracy = last.val_amateur_accuracy;
  out.records.push_back(amateur);
  if (method == Method::expertnet) {
    ResultRecord full = proto;
    full.mode = Mode::full;
    full.accuracy = *last.val_full_accuracy;
    out.records.push_back(full);
  }
  out.log = log.str();
  return out;
}

/// Ordering used for every output: ratio asc, fraction desc, method, mode, seed.
inline bool canonical_less(const ResultRecord& a, const ResultRecord& b) {
  if (a.noise_ratio != b.noise_ratio) return a.noise_ratio < b.noise_ratio;
  if (a.fraction != b.fraction) return a.fraction > b.fraction;
  if (a.method != b.method) return a.method < b.method;
  if (a.mode != b.mode) return a.mode < b.mode;
  return a.seed < b.seed;
}

struct GridResult {
  std::vector<ResultRecord> records;  // canonical order
  std::string log;                    // per-cell logs in canonical order

  bool any_failed() const {
    return std::any_of(records.begin(), records.end(), [](const auto& r) { return r.failed; });
  }
};

inline std::vector<NoiseModel> noise_models(const ExperimentConfig& cfg, std::size_t classes) {
  std::vector<NoiseModel> out;
  if (!cfg.noise_matrix_path.empty()) {
    auto m = noise::load_csv(cfg.noise_matrix_path);
    if (m.classes() != classes) throw ConfigError("noise.matrix does not match the class count");
    out.push_back({m.mean_flip_rate(), std::move(m)});
    return out;
  }
  for (double r : cfg.noise_ratios) out.push_back({r, noise::symmetric_matrix(classes, r)});
  return out;
}

inline std::optional<TableInput> load_table_data(const ExperimentConfig& cfg) {
  if (cfg.dataset != DatasetKind::table) return std::nullopt;
  return load_table_input(cfg);
}

/// Class count of the grid's data.
inline std::size_t class_count(const ExperimentConfig& cfg, const std::optional<TableInput>& table) {
  if (!table) return cfg.blobs.classes;
  if (table->fixed) return table->fixed->train.classes();
  return base_data(cfg, cfg.seeds.front(), table).train.classes();
}

/// Runs every (ratio, fraction, seed, method) job on a pool of cfg.threads
/// workers. Failed jobs yield records marked failed; the grid continues.
inline GridResult run_grid(const ExperimentConfig& cfg) {
  validate(cfg);
  const auto table = load_table_data(cfg);
  const std::size_t classes = class_count(cfg, table);
  const auto models = noise_models(cfg, classes);

  struct Job {
    std::size_t ratio_i, fraction_i, seed_i;
    Method method;
  };
  std::vector<Job> jobs;
  for (std::size_t r = 0; r < models.size(); ++r) {
    for (std::size_t f = 0; f < cfg.fractions.size(); ++f) {
      for (std::size_t s = 0; s < cfg.seeds.size(); ++s) {
        for (Method m : cfg.methods) jobs.push_back({r, f, s, m});
      }
    }
  }

  std::vector<CellOutcome> outcomes(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      const Job& job = jobs[j];
      const auto& nm = models[job.ratio_i];
      const double fraction = cfg.fractions[job.fraction_i];
      const std::uint64_t master = cfg.seeds[job.seed_i];
      try {
        const auto base = base_data(cfg, master, table);
        const auto cell = cell_data(base, nm, fraction, master);
        outcomes[j] = run_cell(cfg, cell, nm.ratio, fraction, master, job.method);
        outcomes[j].model.reset();
      } catch (const std::exception& e) {
        ResultRecord failed;
        failed.method = job.method;
        failed.noise_ratio = nm.ratio;
        failed.fraction = fraction;
        failed.seed = master;
        failed.failed = true;
        failed.diagnostic = e.what();
        CellOutcome o;
        failed.mode = Mode::amateur_only;
        o.records.push_back(failed);
        if (job.method == Method::expertnet) {
          failed.mode = Mode::full;
          o.records.push_back(failed);
        }
        o.log = std::string("cell method=") + to_string(job.method) + " FAILED: " + e.what() + "\n";
        outcomes[j] = std::move(o);
      }
    }
  };
  {
    const std::size_t n_threads = std::min(cfg.threads, std::max<std::size_t>(jobs.size(), 1));
    std::vector<std::jthread> pool;
    for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
    worker();
  }

  // Canonical order for records and logs.
  std::vector<std::size_t> order(jobs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return canonical_less(outcomes[a].records.front(), outcomes[b].records.front());
  });
  GridResult result;
  for (std::size_t j : order) {
    result.log += outcomes[j].log;
    for (auto& r : outcomes[j].records) result.records.push_back(std::move(r));
  }
  std::stable_sort(result.records.begin(), result.records.end(), canonical_less);
  return result;
}

// ---------------------------------------------------------------------------
// Reports

namespace detail {

inline std::string fmt_real(double v, const char* spec = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

/// "pivot_rho20.csv" for 0.2; non-integral percentages keep their digits.
inline std::string pivot_name(double ratio) {
  const double pct = ratio * 100.0;
  const double rounded = std::round(pct);
  if (std::abs(pct - rounded) < 1e-9) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "pivot_rho%02lld.csv", static_cast<long long>(rounded));
    return buf;
  }
  std::string s = fmt_real(pct, "%.6g");
  std::replace(s.begin(), s.end(), '.', 'p');
  return "pivot_rho" + s + ".csv";
}

inline void write_file(const std::filesystem::path& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << contents;
  if (!out) throw IoError("failed writing " + path.string());
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

}  // namespace detail

/// Long-form table, one row per record. Wall-clock time is excluded so the
/// file is a pure function of the records' deterministic fields.
inline std::string results_csv(const std::vector<ResultRecord>& records) {
  std::string out = "method,mode,noise_ratio,fraction,seed,accuracy,epochs,dataset_hash,status,diagnostic\n";
  for (const auto& r : records) {
    out += to_string(r.method);
    out += ',';
    out += to_string(r.mode);
    out += ',' + detail::fmt_real(r.noise_ratio) + ',' + detail::fmt_real(r.fraction) + ',' +
           std::to_string(r.seed) + ',' + (r.failed ? std::string() : detail::fmt_real(r.accuracy, "%.6f")) +
           ',' + std::to_string(r.epochs) + ',' + detail::hex64(r.dataset_hash) + ',' +
           (r.failed ? "failed" : "ok") + ',' + detail::csv_escape(r.diagnostic) + '\n';
  }
  return out;
}

inline std::string timings_csv(const std::vector<ResultRecord>& records) {
  std::string out = "method,mode,noise_ratio,fraction,seed,wall_seconds\n";
  for (const auto& r : records) {
    out += std::string(to_string(r.method)) + ',' + to_string(r.mode) + ',' +
           detail::fmt_real(r.noise_ratio) + ',' + detail::fmt_real(r.fraction) + ',' +
           std::to_string(r.seed) + ',' + detail::fmt_real(r.wall_seconds, "%.3f") + '\n';
  }
  return out;
}

/// "mean±stdev" with sample (n - 1) stdev; a single value reports ±0.0000.
inline std::string mean_stdev_cell(const std::vector<double>& values) {
  if (values.empty()) return "failed";
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = values.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f\xC2\xB1%.4f", mean, sd);
  return buf;
}

/// One pivot per noise ratio: rows = fractions (descending), columns =
/// method:mode, cells = mean±stdev over seeds of successful records.
inline std::map<std::string, std::string> pivot_csvs(const std::vector<ResultRecord>& records) {
  std::vector<ResultRecord> sorted = records;
  std::stable_sort(sorted.begin(), sorted.end(), canonical_less);
  std::vector<double> ratios;
  std::vector<std::pair<Method, Mode>> columns;
  for (const auto& r : sorted) {
    if (std::find(ratios.begin(), ratios.end(), r.noise_ratio) == ratios.end()) ratios.push_back(r.noise_ratio);
    const std::pair<Method, Mode> col{r.method, r.mode};
    if (std::find(columns.begin(), columns.end(), col) == columns.end()) columns.push_back(col);
  }
  std::sort(columns.begin(), columns.end());

  std::map<std::string, std::string> files;
  for (double ratio : ratios) {
    std::vector<double> fractions;
    for (const auto& r : sorted) {
      if (r.noise_ratio == ratio &&
          std::find(fractions.begin(), fractions.end(), r.fraction) == fractions.end()) {
        fractions.push_back(r.fraction);
      }
    }
    std::string out = "fraction";
    for (const auto& [method, mode] : columns) {
      out += ',';
      out += to_string(method);
      out += ':';
      out += to_string(mode);
    }
    out += '\n';
    for (double fraction : fractions) {
      out += detail::fmt_real(fraction);
      for (const auto& [method, mode] : columns) {
        std::vector<double> values;
        bool present = false;
        for (const auto& r : sorted) {
          if (r.noise_ratio == ratio && r.fraction == fraction && r.method == method && r.mode == mode) {
            present = true;
            if (!r.failed) values.push_back(r.accuracy);
          }
        }
        out += ',';
        if (present) out += mean_stdev_cell(values);
      }
      out += '\n';
    }
    files[detail::pivot_name(ratio)] = std::move(out);
  }
  return files;
}

/// Writes results.csv, pivot_rho<RR>.csv per ratio and timings.csv into `dir`.
inline std::vector<std::filesystem::path> emit_report(const std::vector<ResultRecord>& records,
                                                      const std::filesystem::path& dir) {
  if (records.empty()) throw DataError("no records to report");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> written;
  std::vector<ResultRecord> sorted = records;
  std::stable_sort(sorted.begin(), sorted.end(), canonical_less);
  detail::write_file(dir / "results.csv", results_csv(sorted));
  written.push_back(dir / "results.csv");
  for (const auto& [name, contents] : pivot_csvs(sorted)) {
    detail::write_file(dir / name, contents);
    written.push_back(dir / name);
  }
  detail::write_file(dir / "timings.csv", timings_csv(sorted));
  written.push_back(dir / "timings.csv");
  return written;
}

inline void write_log(const GridResult& result, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  detail::write_file(dir / "run.log", result.log);
}

}  // namespace expertnet::harness
