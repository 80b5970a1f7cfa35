#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "config.hpp"
#include "datasets.hpp"
#include "diagnostics.hpp"
#include "models.hpp"
#include "report.hpp"
#include "reprogram.hpp"
#include "stats.hpp"

namespace advrep {

using Logger = std::function<void(const std::string&)>;

inline void log_to_stderr(const std::string& msg) { std::cerr << msg << '\n'; }

struct SourceData {
  LabeledDataset train;
  std::optional<LabeledDataset> test;
};

struct TargetSplits {
  LabeledDataset opt, eval, test;
  std::size_t inner_height = 0, inner_width = 0;  // raw image extent inside the padded input
};

namespace detail {

inline LabeledDataset load_raw(const ExperimentConfig& cfg, const DataSpec& d, bool test_split) {
  if (d.kind == "synth") {
    LabeledDataset ds = synth_target_dataset(test_split ? d.seed + 0x7e57 : d.seed, d.synth);
    ds.name = d.name;
    return ds;
  }
  const std::string& images = test_split ? d.test_images : d.images;
  const std::string& labels = test_split ? d.test_labels : d.labels;
  const auto ip = cfg.resolve(images), lp = cfg.resolve(labels);
  for (const auto& p : {ip, lp})
    if (!std::filesystem::exists(p)) throw IoError("dataset file not found: " + p.string());
  LabeledDataset ds = load_idx(ip, lp);
  const std::size_t limit = test_split ? d.test_limit : d.limit;
  if (limit > 0 && limit < ds.size()) ds = slice(ds, 0, limit);
  ds.name = d.name;
  return ds;
}

inline PadSpec pad_for(const ExperimentConfig& cfg, const LabeledDataset& raw) {
  PadSpec p;
  p.channels = cfg.channels;
  p.height = cfg.height;
  p.width = cfg.width;
  p.inner_height = raw.height();
  p.inner_width = raw.width();
  return p;
}

}  // namespace detail

inline SourceData load_source(const ExperimentConfig& cfg) {
  const auto raw = detail::load_raw(cfg, cfg.source, false);
  SourceData s{preprocess(raw, detail::pad_for(cfg, raw)), std::nullopt};
  if (cfg.source.kind == "synth" || !cfg.source.test_images.empty()) {
    const auto raw_test = detail::load_raw(cfg, cfg.source, true);
    s.test = preprocess(raw_test, detail::pad_for(cfg, raw_test));
  }
  return s;
}

/// Disjoint optimization / evaluation / test splits of the target domain,
/// taken in that order from the generated dataset.
inline TargetSplits load_target(const ExperimentConfig& cfg) {
  const auto raw = detail::load_raw(cfg, cfg.target, false);
  const std::size_t need = cfg.reprogram.opt_set_size + cfg.reprogram.eval_set_size + cfg.test_set_size;
  if (cfg.reprogram.opt_set_size == 0 || cfg.reprogram.eval_set_size == 0 || cfg.test_set_size == 0)
    throw ConfigError("optimization, evaluation and test sets must be non-empty");
  if (need > raw.size())
    throw ConfigError("target dataset has " + std::to_string(raw.size()) + " samples but opt+eval+test needs " +
                      std::to_string(need));
  const auto ds = preprocess(raw, detail::pad_for(cfg, raw));
  const std::size_t a = cfg.reprogram.opt_set_size, b = cfg.reprogram.eval_set_size;
  return {slice(ds, 0, a), slice(ds, a, b), slice(ds, a + b, cfg.test_set_size), raw.height(), raw.width()};
}

inline Network build_model(const ExperimentConfig& cfg, int num_classes) {
  if (cfg.model.architecture == "linear") return build_linear(cfg.input_shape(), num_classes);
  return build_cwnet(cfg.input_shape(), num_classes, cfg.model.width_scale, cfg.model.dropout_rate);
}

/// Builds, initializes and (unless untrained) trains the source model, then
/// writes the checkpoint and its training-loss CSV to dir.
inline Network cmd_train(const ExperimentConfig& cfg, const std::filesystem::path& dir,
                         const Logger& log = log_to_stderr) {
  const SourceData src = load_source(cfg);
  Network net = build_model(cfg, std::max(src.train.num_classes, 10));
  net.input_stats = channel_stats(src.train);
  net = init_weights(std::move(net), cfg.seed, cfg.model.trained ? InitMode::TrainedInit : InitMode::UntrainedRandom);
  std::vector<double> losses;
  if (cfg.model.trained) {
    if (log)
      log("training " + cfg.model.display_tag() + " on " + std::to_string(src.train.size()) + " samples of " +
          src.train.name + " for " + std::to_string(cfg.train.epochs) + " epochs");
    auto res = train_sgd(std::move(net), src.train, cfg.train);
    net = std::move(res.net);
    losses = std::move(res.epoch_loss);
  }
  nlohmann::json extra{{"model_key", model_key(cfg)},
                       {"config_hash", config_hash(cfg)},
                       {"seed", cfg.seed},
                       {"trained", cfg.model.trained},
                       {"train_loss", losses}};
  if (src.test) {
    const double acc = accuracy(net, *src.test);
    extra["source_test_accuracy"] = acc;
    if (log) log("source test accuracy " + fmt17(acc));
  }
  save_network(dir, net, extra);
  std::ofstream os(dir / "train_loss.csv");
  if (!os) throw IoError("cannot write " + (dir / "train_loss.csv").string());
  os << "epoch,loss\n";
  for (std::size_t e = 0; e < losses.size(); ++e) os << e << ',' << fmt17(losses[e]) << '\n';
  return net;
}

/// Loads model_dir when given; otherwise reuses <out>/model if it was built
/// from the same settings, training it first when absent or stale.
inline Network obtain_model(const ExperimentConfig& cfg, const std::optional<std::filesystem::path>& model_dir,
                            const Logger& log = log_to_stderr) {
  Network net;
  if (model_dir) {
    net = load_network(*model_dir);
  } else {
    const auto dir = std::filesystem::path(cfg.out) / "model";
    bool reuse = false;
    if (std::filesystem::exists(dir / "manifest.json")) {
      const auto m = load_manifest(dir);
      reuse = m.value("model_key", std::string()) == model_key(cfg);
    }
    net = reuse ? load_network(dir) : cmd_train(cfg, dir, log);
  }
  if (net.input_shape != cfg.input_shape())
    throw ConfigError("model input " + to_string(net.input_shape) + " does not match configured input " +
                      to_string(cfg.input_shape()));
  return net;
}

struct RunOutcome {
  MetricsRecord record;
  Program program;
  AlignmentPair alignment;
  ConfusionMatrix before, after;
};

/// One reprogramming task: optimize δ on the target splits and measure DA
/// and RA on the test split, r0 and rN on the evaluation split. Artifacts go
/// to run_dir when it is non-empty.
inline RunOutcome run_reprogram(const ExperimentConfig& cfg, const Network& net, std::optional<std::size_t> outer,
                                const std::filesystem::path& run_dir = {}, const TargetSplits* splits = nullptr) {
  std::optional<TargetSplits> own;
  if (!splits) splits = &own.emplace(load_target(cfg));
  if (splits->opt.sample_shape() != net.input_shape)
    throw ConfigError("target samples " + to_string(splits->opt.sample_shape()) + " do not match model input " +
                      to_string(net.input_shape));
  const ClassMap h = cfg.class_map_for(net.num_classes, splits->opt.num_classes);
  if (h.size() != static_cast<std::size_t>(splits->opt.num_classes))
    throw ConfigError("class map covers " + std::to_string(h.size()) + " target classes, target has " +
                      std::to_string(splits->opt.num_classes));
  const Mask mask = build_frame_mask(net.input_shape, splits->inner_height, splits->inner_width, outer);

  RunOutcome out;
  const auto zero = Tensor(net.input_shape);
  out.before = confusion_matrix(net, splits->test, zero, mask, h);
  const double da = domain_alignment(net, splits->test, h);
  out.program = optimize_program(net, splits->opt, splits->eval, mask, h, cfg.reprogram);
  out.after = confusion_matrix(net, splits->test, out.program.delta, mask, h);
  const double ra = reprogramming_accuracy(net, splits->test, out.program.delta, mask, h);
  out.alignment = alignment_before_after(net, splits->eval, mask, h, out.program, cfg.reprogram.loss);

  auto& r = out.record;
  r.source_name = cfg.source.name;
  r.target_name = cfg.target.name;
  r.model_tag = cfg.model.display_tag();
  r.trained = cfg.model.trained;
  r.da = da;
  r.ra = ra;
  r.r0 = out.alignment.r0;
  r.rn = out.alignment.rn;
  r.mask_size = mask.size();
  r.g_l1 = out.alignment.g0_l1;
  r.seed = cfg.seed;
  r.config_hash = config_hash(cfg);

  if (!run_dir.empty()) {
    std::filesystem::create_directories(run_dir);
    nlohmann::json side{{"config_hash", r.config_hash},
                        {"seed", cfg.seed},
                        {"mask_outer", outer ? nlohmann::json(*outer) : nlohmann::json(nullptr)},
                        {"mask_size", r.mask_size},
                        {"class_map", h.entries()},
                        {"reprogram", cfg.reprogram},
                        {"rN", r.rn}};
    save_program(run_dir / "program", out.program, side);
    write_confusion_csv(run_dir / "confusion_before.csv", out.before);
    write_confusion_csv(run_dir / "confusion_after.csv", out.after);
    std::ofstream hist(run_dir / "history.csv");
    hist << "epoch,eval_loss\n";
    for (std::size_t e = 0; e < out.program.history.size(); ++e)
      hist << e << ',' << fmt17(out.program.history[e]) << '\n';
  }
  return out;
}

/// Reprogramming run whose row is appended to <out>/metrics.{csv,jsonl}.
inline MetricsRecord cmd_reprogram(const ExperimentConfig& cfg, const std::optional<std::filesystem::path>& model_dir,
                                   std::optional<std::size_t> outer = {}, const Logger& log = log_to_stderr) {
  const Network net = obtain_model(cfg, model_dir, log);
  if (!outer && !cfg.mask_sizes.empty()) outer = cfg.mask_sizes.front();
  const auto dir = std::filesystem::path(cfg.out);
  const auto res = run_reprogram(cfg, net, outer, dir / "run");
  MetricsWriter(dir).append(res.record);
  if (log) log(metrics_csv_row(res.record));
  return res.record;
}

struct SweepReport {
  std::vector<std::size_t> sizes;
  std::vector<std::optional<MetricsRecord>> records;  // per size, empty on failure
  std::vector<std::string> errors;                    // per size, empty on success

  bool all_ok() const {
    for (const auto& e : errors)
      if (!e.empty()) return false;
    return true;
  }
  bool any_ok() const {
    for (const auto& r : records)
      if (r) return true;
    return false;
  }
};

/// One reprogramming run per mask size with everything else fixed. A failing
/// size is recorded and the remaining sizes still run. Rows are appended in
/// size order once all runs finish.
inline SweepReport cmd_sweep(const ExperimentConfig& cfg, std::size_t jobs,
                             const std::optional<std::filesystem::path>& model_dir = {},
                             const Logger& log = log_to_stderr) {
  if (cfg.mask_sizes.size() < 2) throw ConfigError("a sweep needs at least two mask sizes");
  const Network net = obtain_model(cfg, model_dir, log);
  const TargetSplits splits = load_target(cfg);
  const auto dir = std::filesystem::path(cfg.out);

  SweepReport rep;
  rep.sizes = cfg.mask_sizes;
  rep.records.resize(rep.sizes.size());
  rep.errors.resize(rep.sizes.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < rep.sizes.size();) {
      try {
        const auto run_dir = dir / ("mask_" + std::to_string(rep.sizes[i]));
        rep.records[i] = run_reprogram(cfg, net, rep.sizes[i], run_dir, &splits).record;
      } catch (const std::exception& e) {
        rep.errors[i] = e.what();
      }
    }
  };
  jobs = std::clamp<std::size_t>(jobs, 1, rep.sizes.size());
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < jobs; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  MetricsWriter writer(dir);
  std::ofstream failures(dir / "failures.csv");
  failures << "mask_outer,error\n";
  for (std::size_t i = 0; i < rep.sizes.size(); ++i) {
    if (rep.records[i]) {
      writer.append(*rep.records[i]);
      if (log) log(metrics_csv_row(*rep.records[i]));
    } else {
      std::string msg = rep.errors[i];
      std::replace(msg.begin(), msg.end(), ',', ';');
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      failures << rep.sizes[i] << ',' << msg << '\n';
      if (log) log("mask " + std::to_string(rep.sizes[i]) + " failed: " + rep.errors[i]);
    }
  }
  return rep;
}

/// Correlates two metrics columns with each method and writes
/// <out>/correlations.csv plus scatter data <out>/scatter.csv.
inline std::vector<stats::CorrelationResult> cmd_correlate(const std::filesystem::path& metrics_csv,
                                                           const std::string& x_col, const std::string& y_col,
                                                           const std::vector<stats::Method>& methods,
                                                           std::size_t permutations, std::uint64_t seed,
                                                           const std::filesystem::path& out_dir) {
  const Table t = read_csv(metrics_csv);
  const auto x = t.numeric(x_col), y = t.numeric(y_col);
  if (x.size() < 3)
    throw PreconditionError("correlation needs at least 3 rows, " + metrics_csv.string() + " has " +
                            std::to_string(x.size()));
  std::vector<stats::CorrelationResult> results;
  for (auto m : methods) results.push_back(stats::permutation_pvalue(x, y, m, permutations, seed));

  std::filesystem::create_directories(out_dir);
  std::ofstream cs(out_dir / "correlations.csv");
  if (!cs) throw IoError("cannot write " + (out_dir / "correlations.csv").string());
  cs << correlation_csv_header() << '\n';
  for (const auto& r : results) cs << correlation_csv_row(x_col, y_col, r, x.size()) << '\n';

  std::ofstream sc(out_dir / "scatter.csv");
  sc << "label," << x_col << ',' << y_col << '\n';
  auto cell = [&](std::size_t row, const char* name) {
    for (std::size_t c = 0; c < t.header.size(); ++c)
      if (t.header[c] == name) return t.rows[row][c];
    return std::string();
  };
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::string label = cell(i, "model") + "/m" + cell(i, "mask_size") + "/s" + cell(i, "seed");
    if (label == "/m/s") label = "row" + std::to_string(i + 1);
    sc << label << ',' << fmt17(x[i]) << ',' << fmt17(y[i]) << '\n';
  }
  return results;
}

}  // namespace advrep
