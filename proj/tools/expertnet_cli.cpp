// expertnet command-line driver.
//
//   expertnet run --config configs/smoke.conf [--set key=value ...]
//   expertnet train --config ... --ratio 0.3 --fraction 1 --method expertnet --save-model m.ckpt
//   expertnet noise-stats --classes 10 --ratio 0.4 --samples 100000
//   expertnet gradcheck --trials 120

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "expertnet/checkpoint.hpp"
#include "expertnet/config.hpp"
#include "expertnet/gradcheck.hpp"
#include "expertnet/harness.hpp"
#include "expertnet/noise.hpp"

namespace {

using namespace expertnet;

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> threads;
};

void add_common(CLI::App* cmd, CommonOptions& opts) {
  cmd->add_option("-c,--config", opts.config_path, "configuration file");
  cmd->add_option("--set", opts.overrides, "override a configuration key (key=value)");
  cmd->add_option("--seed", opts.seed, "replace the seed list with one master seed");
  cmd->add_option("-o,--out", opts.out, "output directory");
  cmd->add_option("-j,--threads", opts.threads, "worker threads");
}

harness::ExperimentConfig resolve_config(const CommonOptions& opts) {
  harness::ExperimentConfig cfg =
      opts.config_path.empty() ? harness::ExperimentConfig{} : harness::load_config(opts.config_path);
  for (const auto& o : opts.overrides) harness::apply_override(cfg, o);
  if (opts.seed) cfg.seeds = {*opts.seed};
  if (opts.out) cfg.output_dir = *opts.out;
  if (opts.threads) cfg.threads = *opts.threads;
  harness::validate(cfg);
  return cfg;
}

int cmd_run(const CommonOptions& opts) {
  const auto cfg = resolve_config(opts);
  const auto result = harness::run_grid(cfg);
  const auto written = harness::emit_report(result.records, cfg.output_dir);
  harness::write_log(result, cfg.output_dir);
  for (const auto& p : written) std::cout << "wrote " << p.string() << '\n';
  std::size_t failed = 0;
  for (const auto& r : result.records) {
    if (r.failed) {
      ++failed;
      std::cerr << "failed: " << harness::to_string(r.method) << " ratio=" << r.noise_ratio
                << " fraction=" << r.fraction << " seed=" << r.seed << ": " << r.diagnostic << '\n';
    }
  }
  return failed == 0 ? 0 : 1;
}

struct TrainArgs {
  double ratio = 0.2;
  double fraction = 1.0;
  std::string method = "expertnet";
  std::string save_model;
};

int cmd_train(const CommonOptions& opts, const TrainArgs& args) {
  auto cfg = resolve_config(opts);
  const auto method = harness::parse_method(args.method);
  if (!args.save_model.empty() && method != harness::Method::expertnet) {
    throw ConfigError("--save-model only applies to the expertnet method");
  }
  const std::uint64_t master = cfg.seeds.front();
  const auto table = harness::load_table_data(cfg);
  const std::size_t classes = harness::class_count(cfg, table);
  harness::NoiseModel noise_model{args.ratio, noise::symmetric_matrix(classes, args.ratio)};
  if (!cfg.noise_matrix_path.empty()) {
    auto m = noise::load_csv(cfg.noise_matrix_path);
    noise_model = {m.mean_flip_rate(), std::move(m)};
  }
  const auto base = harness::base_data(cfg, master, table);
  const auto cell = harness::cell_data(base, noise_model, args.fraction, master);
  auto outcome = harness::run_cell(cfg, cell, noise_model.ratio, args.fraction, master, method);
  std::cout << outcome.log;
  for (const auto& r : outcome.records) {
    std::printf("%s %s accuracy %.4f (%.2f s)\n", harness::to_string(r.method), harness::to_string(r.mode),
                r.accuracy, r.wall_seconds);
  }
  if (!args.save_model.empty()) {
    checkpoint::save(*outcome.model, args.save_model);
    std::cout << "saved model to " << args.save_model << '\n';
  }
  return 0;
}

struct NoiseArgs {
  std::size_t classes = 10;
  double ratio = 0.2;
  std::size_t samples = 100000;
  std::uint64_t seed = 1;
  std::string matrix_path;
};

int cmd_noise_stats(const NoiseArgs& args) {
  const noise::TransitionMatrix nominal = args.matrix_path.empty()
                                              ? noise::symmetric_matrix(args.classes, args.ratio)
                                              : noise::load_csv(args.matrix_path);
  const std::size_t k = nominal.classes();
  std::vector<std::size_t> truth(args.samples);
  for (std::size_t i = 0; i < truth.size(); ++i) truth[i] = i % k;
  const auto given = noise::corrupt_labels(truth, nominal, args.seed);
  std::size_t flips = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) flips += truth[i] != given[i];
  const auto empirical = noise::empirical_matrix(truth, given, k);
  double worst = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) worst = std::max(worst, std::abs(empirical.matrix(i, j) - nominal(i, j)));
  }
  std::printf("samples %zu classes %zu\n", args.samples, k);
  std::printf("nominal flip rate %.6f realized %.6f\n", nominal.mean_flip_rate(),
              static_cast<double>(flips) / static_cast<double>(args.samples));
  std::printf("max |empirical - nominal| %.6f\n", worst);
  std::cout << "empirical matrix:\n";
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) std::printf(j + 1 < k ? "%.4f," : "%.4f\n", empirical.matrix(i, j));
  }
  return 0;
}

int cmd_gradcheck(const gradcheck::Options& options) {
  const auto report = gradcheck::run(options);
  for (const auto& t : report.trials) {
    if (!t.passed) std::printf("FAIL %s (max rel err %.3g)\n", t.description.c_str(), t.max_relative_error);
  }
  std::printf("trials %zu failures %zu max relative error %.3g\n", report.trials.size(), report.failures,
              report.max_relative_error);
  std::printf("covered:");
  for (const auto& k : report.kinds_covered) std::printf(" %s", k.c_str());
  std::printf("\n");
  return report.passed() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ExpertNet noisy-label training and experiment harness"};
  app.require_subcommand(1);

  CommonOptions run_opts;
  auto* run = app.add_subcommand("run", "run an experiment grid and write reports");
  add_common(run, run_opts);

  CommonOptions train_opts;
  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "train one method on one grid cell");
  add_common(train, train_opts);
  train->add_option("--ratio", train_args.ratio, "symmetric noise ratio");
  train->add_option("--fraction", train_args.fraction, "fraction of training data");
  train->add_option("--method", train_args.method, "expertnet | plain-ce | bootstrap | forward");
  train->add_option("--save-model", train_args.save_model, "write an ExpertNet checkpoint");

  NoiseArgs noise_args;
  auto* noise_cmd = app.add_subcommand("noise-stats", "corrupt synthetic labels and report flip statistics");
  noise_cmd->add_option("--classes", noise_args.classes, "class count")->check(CLI::Range(2, 100000));
  noise_cmd->add_option("--ratio", noise_args.ratio, "symmetric noise ratio");
  noise_cmd->add_option("--samples", noise_args.samples, "label count")->check(CLI::PositiveNumber);
  noise_cmd->add_option("--seed", noise_args.seed, "noise seed");
  noise_cmd->add_option("--matrix", noise_args.matrix_path, "transition matrix CSV instead of --ratio");

  gradcheck::Options grad_opts;
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of the backward pass");
  grad->add_option("--trials", grad_opts.trials, "random configurations");
  grad->add_option("--seed", grad_opts.seed, "generator seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(run_opts);
    if (*train) return cmd_train(train_opts, train_args);
    if (*noise_cmd) return cmd_noise_stats(noise_args);
    if (*grad) return cmd_gradcheck(grad_opts);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
