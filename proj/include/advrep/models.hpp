#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "autograd.hpp"
#include "class_map.hpp"
#include "datasets.hpp"
#include "errors.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace advrep {

enum class LayerKind { Standardize, Conv, Relu, MaxPool, Flatten, Dense, Dropout };

NLOHMANN_JSON_SERIALIZE_ENUM(LayerKind, {{LayerKind::Standardize, "standardize"},
                                         {LayerKind::Conv, "conv"},
                                         {LayerKind::Relu, "relu"},
                                         {LayerKind::MaxPool, "maxpool"},
                                         {LayerKind::Flatten, "flatten"},
                                         {LayerKind::Dense, "dense"},
                                         {LayerKind::Dropout, "dropout"}})

inline constexpr std::size_t kNoParam = static_cast<std::size_t>(-1);

struct Layer {
  LayerKind kind = LayerKind::Relu;
  std::size_t weight = kNoParam;  // index into Network::params
  std::size_t bias = kNoParam;
  std::size_t padding = 0;        // conv only
  double rate = 0.0;              // dropout only

  friend bool operator==(const Layer&, const Layer&) = default;
};

inline void to_json(nlohmann::json& j, const Layer& l) {
  j = nlohmann::json{{"kind", l.kind}};
  if (l.weight != kNoParam) j["weight"] = l.weight;
  if (l.bias != kNoParam) j["bias"] = l.bias;
  if (l.kind == LayerKind::Conv) j["padding"] = l.padding;
  if (l.kind == LayerKind::Dropout) j["rate"] = l.rate;
}

inline void from_json(const nlohmann::json& j, Layer& l) {
  l.kind = j.at("kind").get<LayerKind>();
  l.weight = j.value("weight", kNoParam);
  l.bias = j.value("bias", kNoParam);
  l.padding = j.value("padding", std::size_t{0});
  l.rate = j.value("rate", 0.0);
}

/// Feed-forward classifier: an ordered layer list over a parameter store.
/// Dense weights are stored [in×out]; conv kernels [out×in×3×3].
struct Network {
  std::string architecture;
  Shape input_shape;
  int num_classes = 0;
  double width_scale = 1.0;
  std::vector<Layer> layers;
  std::vector<Tensor> params;
  ChannelStats input_stats;

  /// Inference forward pass: parameters are frozen, dropout is inactive.
  Var forward(Tape& tape, Var x) const {
    return run(tape, x, [&](std::size_t i) { return tape.constant(params[i]); }, nullptr);
  }

  /// Training forward pass: parameters with requires_grad receive gradients,
  /// dropout layers draw from rng when it is non-null.
  Var forward_train(Tape& tape, Var x, Rng* rng) {
    return run(tape, x, [&](std::size_t i) { return tape.leaf(params[i]); }, rng);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.size();
    return n;
  }

 private:
  template <typename ParamFn>
  Var run(Tape& tape, Var x, ParamFn&& param, Rng* rng) const {
    if (tape.shape(x) != input_shape)
      throw DimensionError("network expects input " + to_string(input_shape) + ", got " + to_string(tape.shape(x)));
    Var h = x;
    for (const Layer& l : layers) {
      switch (l.kind) {
        case LayerKind::Standardize:
          h = standardize(tape, h, input_stats.mean, input_stats.stddev);
          break;
        case LayerKind::Conv:
          h = conv2d(tape, h, param(l.weight), 1, l.padding);
          h = add_channel_bias(tape, h, param(l.bias));
          break;
        case LayerKind::Relu:
          h = relu(tape, h);
          break;
        case LayerKind::MaxPool:
          h = maxpool2d(tape, h);
          break;
        case LayerKind::Flatten:
          h = reshape(tape, h, {1, tape.value(h).size()});
          break;
        case LayerKind::Dense:
          h = matmul(tape, h, param(l.weight));
          h = add_row_bias(tape, h, param(l.bias));
          break;
        case LayerKind::Dropout:
          if (rng && l.rate > 0.0) h = dropout(tape, h, l.rate, *rng);
          break;
      }
    }
    return h;
  }
};

namespace detail {

inline std::size_t add_param(Network& net, Shape shape) {
  net.params.emplace_back(std::move(shape));
  return net.params.size() - 1;
}

inline void add_conv(Network& net, std::size_t in, std::size_t out) {
  Layer l{LayerKind::Conv};
  l.weight = add_param(net, {out, in, 3, 3});
  l.bias = add_param(net, {out});
  l.padding = 1;
  net.layers.push_back(l);
}

inline void add_dense(Network& net, std::size_t in, std::size_t out) {
  Layer l{LayerKind::Dense};
  l.weight = add_param(net, {in, out});
  l.bias = add_param(net, {out});
  net.layers.push_back(l);
}

inline std::size_t scaled(std::size_t base, double s) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(base) * s)));
}

}  // namespace detail

/// CWNet layer stack (conv32-conv32-pool-conv64-conv64(+dropout)-pool-fc200-fc200-fc10)
/// behind a frozen input standardization, with counts scaled by width_scale
/// and 3×3 "same" convolutions. Parameters are zero until init_weights().
inline Network build_cwnet(const Shape& input_shape, int num_classes, double width_scale,
                           double dropout_rate = 0.5) {
  if (input_shape.size() != 3) throw DimensionError("input shape must be (C,H,W)");
  if (num_classes < 1) throw ArgumentError("need at least one class");
  if (!(width_scale > 0.0)) throw ArgumentError("width scale must be positive");
  const std::size_t C = input_shape[0], H = input_shape[1], W = input_shape[2];
  if (C == 0 || H == 0 || W == 0 || H % 4 || W % 4)
    throw DimensionError("CWNet needs spatial extents divisible by 4, got " + to_string(input_shape));
  const std::size_t f1 = detail::scaled(32, width_scale), f2 = detail::scaled(64, width_scale);
  const std::size_t units = detail::scaled(200, width_scale);

  Network net;
  net.architecture = "cwnet";
  net.input_shape = input_shape;
  net.num_classes = num_classes;
  net.width_scale = width_scale;
  net.input_stats = {std::vector<double>(C, 0.0), std::vector<double>(C, 1.0)};
  net.layers.push_back({LayerKind::Standardize});
  detail::add_conv(net, C, f1);
  net.layers.push_back({LayerKind::Relu});
  detail::add_conv(net, f1, f1);
  net.layers.push_back({LayerKind::Relu});
  net.layers.push_back({LayerKind::MaxPool});
  detail::add_conv(net, f1, f2);
  net.layers.push_back({LayerKind::Relu});
  detail::add_conv(net, f2, f2);
  Layer drop{LayerKind::Dropout};
  drop.rate = dropout_rate;
  net.layers.push_back(drop);
  net.layers.push_back({LayerKind::Relu});
  net.layers.push_back({LayerKind::MaxPool});
  net.layers.push_back({LayerKind::Flatten});
  detail::add_dense(net, f2 * (H / 4) * (W / 4), units);
  net.layers.push_back({LayerKind::Relu});
  detail::add_dense(net, units, units);
  net.layers.push_back({LayerKind::Relu});
  detail::add_dense(net, units, static_cast<std::size_t>(num_classes));
  return net;
}

/// Single dense layer on the flattened input: logits = vec(x)ᵀW + b.
inline Network build_linear(const Shape& input_shape, int num_classes) {
  Network net;
  net.architecture = "linear";
  net.input_shape = input_shape;
  net.num_classes = num_classes;
  net.layers.push_back({LayerKind::Flatten});
  detail::add_dense(net, numel(input_shape), static_cast<std::size_t>(num_classes));
  return net;
}

enum class InitMode { TrainedInit, UntrainedRandom };

/// Fan-in scaled uniform weights in ±sqrt(1/fan_in), zero biases. Both modes
/// use the same initializer; the mode only records intent.
inline Network init_weights(Network net, std::uint64_t seed, InitMode /*mode*/ = InitMode::TrainedInit) {
  for (const Layer& l : net.layers) {
    if (l.weight == kNoParam) continue;
    Tensor& w = net.params[l.weight];
    const std::size_t fan_in = l.kind == LayerKind::Conv ? w.shape[1] * w.shape[2] * w.shape[3] : w.shape[0];
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    Rng rng = Rng::derive(seed, {0x1417ULL, l.weight});
    for (double& v : w.data) v = rng.uniform(-bound, bound);
    if (l.bias != kNoParam) std::fill(net.params[l.bias].data.begin(), net.params[l.bias].data.end(), 0.0);
  }
  return net;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

inline std::vector<double> logits_of(const Network& net, const Tensor& x) {
  Tape tape;
  return tape.value(net.forward(tape, tape.constant(x))).data;
}

/// Index of the largest entry; ties go to the lowest index.
inline int argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return static_cast<int>(best);
}

struct Predictions {
  std::vector<int> labels;
  Tensor logits;  // [n×classes]
};

/// Predicts every sample of an [n×C×H×W] batch.
inline Predictions predict_batch(const Network& net, const Tensor& images) {
  if (images.rank() != 4 || Shape(images.shape.begin() + 1, images.shape.end()) != net.input_shape)
    throw DimensionError("batch " + to_string(images.shape) + " does not match network input " +
                         to_string(net.input_shape));
  const std::size_t n = images.shape[0], d = numel(net.input_shape), c = static_cast<std::size_t>(net.num_classes);
  Predictions out{std::vector<int>(n), Tensor({n, c})};
  Tensor x(net.input_shape);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(images.data.begin() + static_cast<std::ptrdiff_t>(i * d), d, x.data.begin());
    const auto z = logits_of(net, x);
    std::copy(z.begin(), z.end(), out.logits.data.begin() + static_cast<std::ptrdiff_t>(i * c));
    out.labels[i] = argmax(z);
  }
  return out;
}

/// Fraction of samples whose prediction equals map(label), or label when no map.
inline double accuracy_of(std::span<const int> predicted, std::span<const int> labels,
                          const std::optional<ClassMap>& map) {
  if (predicted.size() != labels.size()) throw DimensionError("prediction/label count mismatch");
  if (labels.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (predicted[i] == (map ? (*map)(labels[i]) : labels[i])) ++hits;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

inline double accuracy(const Network& net, const LabeledDataset& ds, const std::optional<ClassMap>& map = {}) {
  return accuracy_of(predict_batch(net, ds.images).labels, ds.labels, map);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
  int epochs = 10;
  double learning_rate = 0.001;
  double momentum = 0.9;
  std::size_t batch_size = 10;
  std::uint64_t seed = 0;
  bool dropout = false;

  void validate() const {
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (learning_rate < 0.0) throw ConfigError("learning rate must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0,1)");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  }
};

struct TrainResult {
  Network net;
  std::vector<double> epoch_loss;  // mean training loss per epoch
};

/// Mini-batch SGD with classical momentum: v ← m·v + g, θ ← θ − lr·v, where
/// g is the batch-mean gradient reduced in sample order.
inline TrainResult train_sgd(Network net, const LabeledDataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  if (ds.sample_shape() != net.input_shape)
    throw DimensionError("dataset samples " + to_string(ds.sample_shape()) + " do not match network input " +
                         to_string(net.input_shape));
  std::vector<std::vector<double>> velocity;
  for (auto& p : net.params) {
    p.requires_grad = true;
    velocity.emplace_back(p.size(), 0.0);
  }
  TrainResult result;
  Tensor x(net.input_shape);
  const std::size_t d = ds.sample_size();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto batches = make_batches(ds.size(), cfg.batch_size, cfg.seed, static_cast<std::uint64_t>(epoch));
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      for (auto& p : net.params) p.zero_grad();
      double batch_loss = 0.0;
      for (std::size_t k = 0; k < batches[b].size(); ++k) {
        const std::size_t i = batches[b][k];
        std::copy_n(ds.images.data.begin() + static_cast<std::ptrdiff_t>(i * d), d, x.data.begin());
        Rng drop_rng = Rng::derive(cfg.seed, {0xd209ULL, static_cast<std::uint64_t>(epoch), b, k});
        Tape tape;
        Var logits = net.forward_train(tape, tape.constant(x), cfg.dropout ? &drop_rng : nullptr);
        const int label = ds.labels[i];
        Var loss = softmax_cross_entropy(tape, logits, std::span<const int>(&label, 1));
        const double lv = tape.value(loss)[0];
        if (!std::isfinite(lv))
          throw DivergenceError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                                std::to_string(b));
        batch_loss += lv;
        tape.backward(loss);
      }
      const double inv = 1.0 / static_cast<double>(batches[b].size());
      for (std::size_t p = 0; p < net.params.size(); ++p) {
        auto& g = *net.params[p].grad;
        auto& v = velocity[p];
        auto& w = net.params[p].data;
        for (std::size_t j = 0; j < w.size(); ++j) {
          v[j] = cfg.momentum * v[j] + g[j] * inv;
          w[j] -= cfg.learning_rate * v[j];
        }
      }
      epoch_loss += batch_loss * inv;
    }
    result.epoch_loss.push_back(batches.empty() ? 0.0 : epoch_loss / static_cast<double>(batches.size()));
  }
  for (auto& p : net.params) {
    p.requires_grad = false;
    p.grad.reset();
  }
  result.net = std::move(net);
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints: manifest.json + one TNSR file per parameter
// ---------------------------------------------------------------------------

inline nlohmann::json architecture_json(const Network& net) {
  return nlohmann::json{{"architecture", net.architecture},
                        {"input_shape", net.input_shape},
                        {"num_classes", net.num_classes},
                        {"width_scale", net.width_scale},
                        {"layers", net.layers},
                        {"param_shapes", [&] {
                           std::vector<Shape> s;
                           for (const auto& p : net.params) s.push_back(p.shape);
                           return s;
                         }()},
                        {"input_mean", net.input_stats.mean},
                        {"input_stddev", net.input_stats.stddev}};
}

inline void save_network(const std::filesystem::path& dir, const Network& net, nlohmann::json extra = {}) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = extra.is_object() ? extra : nlohmann::json::object();
  manifest["network"] = architecture_json(net);
  for (std::size_t i = 0; i < net.params.size(); ++i)
    save_tensor(dir / ("param_" + std::to_string(i) + ".tnsr"), net.params[i]);
  std::ofstream os(dir / "manifest.json");
  if (!os) throw IoError("cannot write " + (dir / "manifest.json").string());
  os << manifest.dump(2) << '\n';
}

inline nlohmann::json load_manifest(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw IoError("cannot open model manifest " + (dir / "manifest.json").string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed manifest " + (dir / "manifest.json").string() + ": " + e.what());
  }
}

inline Network load_network(const std::filesystem::path& dir) {
  const auto manifest = load_manifest(dir);
  Network net;
  try {
    const auto& a = manifest.at("network");
    net.architecture = a.at("architecture").get<std::string>();
    net.input_shape = a.at("input_shape").get<Shape>();
    net.num_classes = a.at("num_classes").get<int>();
    net.width_scale = a.at("width_scale").get<double>();
    net.layers = a.at("layers").get<std::vector<Layer>>();
    net.input_stats.mean = a.at("input_mean").get<std::vector<double>>();
    net.input_stats.stddev = a.at("input_stddev").get<std::vector<double>>();
    const auto shapes = a.at("param_shapes").get<std::vector<Shape>>();
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      Tensor t = load_tensor(dir / ("param_" + std::to_string(i) + ".tnsr"));
      if (t.shape != shapes[i])
        throw ConsistencyError("parameter " + std::to_string(i) + " has shape " + to_string(t.shape) +
                               ", manifest says " + to_string(shapes[i]));
      net.params.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed network manifest in " + dir.string() + ": " + e.what());
  }
  return net;
}

}  // namespace advrep
