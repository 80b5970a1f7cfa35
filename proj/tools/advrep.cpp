// Command-line driver: train, reprogram, sweep, correlate.
//
// Exit codes: 0 all runs completed, 1 error, 2 usage error,
// 3 partial failure (some sweep runs failed).

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "advrep/experiment.hpp"

namespace {

constexpr int kExitError = 1;
constexpr int kExitUsage = 2;
constexpr int kExitPartial = 3;

advrep::ExperimentConfig load(const std::string& path, const std::optional<std::uint64_t>& seed,
                              const std::optional<std::string>& out) {
  auto cfg = advrep::load_config(path);
  if (seed) {
    cfg.seed = *seed;
    cfg.train.seed = *seed;
    cfg.reprogram.seed = *seed;
  }
  if (out) cfg.out = *out;
  return cfg;
}

std::vector<advrep::stats::Method> parse_methods(const std::string& list) {
  std::vector<advrep::stats::Method> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(advrep::stats::parse_method(item));
  if (out.empty()) throw advrep::ArgumentError("no correlation methods given");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial reprogramming laboratory"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> model_dir;
  std::optional<std::size_t> mask;
  std::size_t jobs = 1;

  auto* train = app.add_subcommand("train", "train (or just initialize) the source model");
  auto* reprogram = app.add_subcommand("reprogram", "optimize one adversarial program and append a metrics row");
  auto* sweep = app.add_subcommand("sweep", "one reprogramming run per configured mask size");
  for (auto* sub : {train, reprogram, sweep}) {
    sub->add_option("--config", config_path, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--out", out, "override the output directory");
  }
  for (auto* sub : {reprogram, sweep})
    sub->add_option("--model", model_dir, "checkpoint directory (default: <out>/model, trained on demand)");
  reprogram->add_option("--mask", mask, "outer extent of the program annulus (default: first mask size, else full)");
  sweep->add_option("--jobs", jobs, "runs executed in parallel")->check(CLI::PositiveNumber);

  auto* correlate = app.add_subcommand("correlate", "correlate two metrics columns with permutation p-values");
  std::string metrics_path, x_col = "rN", y_col = "RA", methods = "pearson,spearman,kendall";
  std::size_t permutations = 10000;
  std::uint64_t corr_seed = 0;
  std::string corr_out = ".";
  correlate->add_option("metrics", metrics_path, "metrics CSV")->required()->check(CLI::ExistingFile);
  correlate->add_option("-x,--x", x_col, "x column");
  correlate->add_option("-y,--y", y_col, "y column");
  correlate->add_option("--methods", methods, "comma list of pearson,spearman,kendall");
  correlate->add_option("--permutations", permutations, "permutations for the p-value");
  correlate->add_option("--seed", corr_seed, "permutation seed");
  correlate->add_option("--out", corr_out, "output directory for correlations.csv and scatter.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  const std::optional<std::filesystem::path> model =
      model_dir ? std::optional<std::filesystem::path>(*model_dir) : std::nullopt;
  try {
    if (*train) {
      const auto cfg = load(config_path, seed, out);
      advrep::cmd_train(cfg, std::filesystem::path(cfg.out) / "model");
      std::cout << "checkpoint written to " << (std::filesystem::path(cfg.out) / "model").string() << '\n';
    } else if (*reprogram) {
      const auto cfg = load(config_path, seed, out);
      const auto row = advrep::cmd_reprogram(cfg, model, mask);
      std::cout << advrep::kMetricsHeader << '\n' << advrep::metrics_csv_row(row) << '\n';
    } else if (*sweep) {
      const auto cfg = load(config_path, seed, out);
      const auto rep = advrep::cmd_sweep(cfg, jobs, model);
      if (!rep.all_ok()) return rep.any_ok() ? kExitPartial : kExitError;
    } else if (*correlate) {
      const auto res = advrep::cmd_correlate(metrics_path, x_col, y_col, parse_methods(methods), permutations,
                                             corr_seed, corr_out);
      std::cout << advrep::correlation_csv_header() << '\n';
      const auto n = advrep::read_csv(metrics_path).rows.size();
      for (const auto& r : res) std::cout << advrep::correlation_csv_row(x_col, y_col, r, n) << '\n';
    }
  } catch (const advrep::ArgumentError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return 0;
}
