#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "autograd.hpp"
#include "class_map.hpp"
#include "datasets.hpp"
#include "errors.hpp"
#include "models.hpp"
#include "tensor.hpp"

namespace advrep {

// ---------------------------------------------------------------------------
// Mask
// ---------------------------------------------------------------------------

/// Binary reprogramming mask; ones mark the perturbable frame.
struct Mask {
  Tensor values;

  /// Number of ones (the mask's l1 norm).
  std::size_t size() const {
    std::size_t n = 0;
    for (double v : values.data) n += v != 0.0;
    return n;
  }
  const Shape& shape() const { return values.shape; }
};

/// Frame mask for a C×H×W input: zero over the centered inner_h×inner_w
/// region, one elsewhere. When outer is given, only the centered outer×outer
/// square is active, so the program lives on an annulus.
inline Mask build_frame_mask(const Shape& input_shape, std::size_t inner_h, std::size_t inner_w,
                             std::optional<std::size_t> outer = {}) {
  if (input_shape.size() != 3) throw DimensionError("mask input shape must be (C,H,W)");
  const std::size_t C = input_shape[0], H = input_shape[1], W = input_shape[2];
  if (inner_h > H || inner_w > W)
    throw DimensionError("inner region " + std::to_string(inner_h) + "x" + std::to_string(inner_w) +
                         " larger than input " + to_string(input_shape));
  const std::size_t oh = outer ? std::min(*outer, H) : H;
  const std::size_t ow = outer ? std::min(*outer, W) : W;
  if (oh < inner_h || ow < inner_w)
    throw DimensionError("outer extent " + std::to_string(*outer) + " smaller than the inner region");
  const std::size_t it = (H - inner_h) / 2, il = (W - inner_w) / 2;
  const std::size_t ot = (H - oh) / 2, ol = (W - ow) / 2;
  Mask m{Tensor(input_shape)};
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const bool in_outer = y >= ot && y < ot + oh && x >= ol && x < ol + ow;
        const bool in_inner = y >= it && y < it + inner_h && x >= il && x < il + inner_w;
        m.values.data[(c * H + y) * W + x] = in_outer && !in_inner ? 1.0 : 0.0;
      }
  return m;
}

// ---------------------------------------------------------------------------
// Program and configuration
// ---------------------------------------------------------------------------

/// Per-sample loss used by the objective. CrossEntropy is the reprogramming
/// loss; Logit takes the raw mapped-class logit as the loss, which makes the
/// objective exactly linear in the program for linear models.
enum class SampleLoss { CrossEntropy, Logit };

NLOHMANN_JSON_SERIALIZE_ENUM(SampleLoss, {{SampleLoss::CrossEntropy, "cross_entropy"}, {SampleLoss::Logit, "logit"}})

struct ReprogramConfig {
  double eta = 0.005;
  int epochs = 100;
  std::size_t batch_size = 50;
  std::size_t opt_set_size = 5000;
  std::size_t eval_set_size = 5000;
  std::uint64_t seed = 0;
  /// Select δ* on a held-out evaluation set; otherwise on the optimization set.
  bool held_out_eval = true;
  SampleLoss loss = SampleLoss::CrossEntropy;

  void validate() const {
    if (!(eta > 0.0) || !std::isfinite(eta)) throw ConfigError("eta must be positive");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const ReprogramConfig& c) {
  j = nlohmann::json{{"eta", c.eta},
                     {"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"opt_set_size", c.opt_set_size},
                     {"eval_set_size", c.eval_set_size},
                     {"seed", c.seed},
                     {"held_out_eval", c.held_out_eval},
                     {"loss", c.loss}};
}

inline void from_json(const nlohmann::json& j, ReprogramConfig& c) {
  ReprogramConfig d;
  c.eta = j.value("eta", d.eta);
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.opt_set_size = j.value("opt_set_size", d.opt_set_size);
  c.eval_set_size = j.value("eval_set_size", d.eval_set_size);
  c.seed = j.value("seed", d.seed);
  c.held_out_eval = j.value("held_out_eval", d.held_out_eval);
  c.loss = j.value("loss", d.loss);
}

/// Optimized adversarial program δ* with its selection record.
struct Program {
  Tensor delta;
  double best_loss = std::numeric_limits<double>::infinity();
  double initial_loss = std::numeric_limits<double>::quiet_NaN();  // L(0) on the selection set
  std::vector<double> history;  // selection-set loss after each epoch
  int best_epoch = -1;          // 0-based; -1 means δ* = 0
};

inline Program zero_program(const Shape& shape) {
  Program p;
  p.delta = Tensor(shape);
  return p;
}

// ---------------------------------------------------------------------------
// Primitives of the objective
// ---------------------------------------------------------------------------

inline Tensor box_project(Tensor delta) {
  for (double& v : delta.data) v = std::clamp(v, -1.0, 1.0);
  return delta;
}

/// x + δ∘M. Requires x to be exactly zero wherever the mask is one.
inline Tensor apply_program(const Tensor& x, const Tensor& delta, const Mask& mask) {
  if (x.shape != mask.shape() || delta.shape != mask.shape())
    throw DimensionError("program " + to_string(delta.shape) + ", mask " + to_string(mask.shape()) +
                         " and sample " + to_string(x.shape) + " must agree");
  Tensor out(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double m = mask.values.data[i];
    if (m != 0.0 && x.data[i] != 0.0)
      throw PreconditionError("sample is nonzero at masked coordinate " + std::to_string(i));
    out.data[i] = x.data[i] + delta.data[i] * m;
  }
  return out;
}

namespace detail {

inline void check_program_inputs(const Network& net, const LabeledDataset& ds, const Tensor& delta, const Mask& mask) {
  if (ds.sample_shape() != net.input_shape)
    throw DimensionError("samples " + to_string(ds.sample_shape()) + " do not match network input " +
                         to_string(net.input_shape));
  if (delta.shape != net.input_shape || mask.shape() != net.input_shape)
    throw DimensionError("program/mask shape must equal network input " + to_string(net.input_shape));
}

/// Writes x_i + δ∘M into out without re-checking the zero-frame precondition.
inline void perturb_into(std::span<const double> x, const Tensor& delta, const Mask& mask, Tensor& out) {
  for (std::size_t k = 0; k < x.size(); ++k) out.data[k] = x[k] + delta.data[k] * mask.values.data[k];
}

inline Var sample_loss(Tape& tape, Var logits, int source_label, SampleLoss kind) {
  const std::span<const int> label(&source_label, 1);
  if (kind == SampleLoss::CrossEntropy) return softmax_cross_entropy(tape, logits, label);
  const Tensor& z = tape.value(logits);
  if (source_label < 0 || static_cast<std::size_t>(source_label) >= z.size())
    throw LabelError("mapped label " + std::to_string(source_label) + " outside logits");
  Tensor pick(z.shape);
  pick.data[static_cast<std::size_t>(source_label)] = 1.0;
  return dot(tape, logits, tape.input(std::move(pick), false));
}

}  // namespace detail

/// Loss and input gradient of one sample at input x.
struct SampleGradient {
  double loss = 0.0;
  std::vector<double> grad;
};

inline SampleGradient input_gradient(const Network& net, const Tensor& x, int source_label,
                                     SampleLoss kind = SampleLoss::CrossEntropy) {
  Tape tape;
  Var xin = tape.input(x, true);
  Var logits = net.forward(tape, xin);
  Var loss = detail::sample_loss(tape, logits, source_label, kind);
  tape.backward(loss);
  return {tape.value(loss)[0], tape.grad(xin)};
}

inline double sample_loss_value(const Network& net, const Tensor& x, int source_label,
                                SampleLoss kind = SampleLoss::CrossEntropy) {
  Tape tape;
  Var logits = net.forward(tape, tape.constant(x));
  return tape.value(detail::sample_loss(tape, logits, source_label, kind))[0];
}

/// L(δ) = mean over samples of loss(x_i + δ∘M, h(y_i)).
inline double reprogramming_loss(const Network& net, const LabeledDataset& ds, const Tensor& delta, const Mask& mask,
                                 const ClassMap& h, SampleLoss kind = SampleLoss::CrossEntropy) {
  detail::check_program_inputs(net, ds, delta, mask);
  Tensor x(net.input_shape);
  double total = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    detail::perturb_into(ds.sample_view(i), delta, mask, x);
    total += sample_loss_value(net, x, h(ds.labels[i]), kind);
  }
  return total / static_cast<double>(ds.size());
}

/// Streaming summary of masked per-sample gradients g_i = ∇ₓℓ ∘ M.
struct GradientSummary {
  Tensor mean;            // g = (1/n) Σ g_i, zero outside the mask
  double mean_l1 = 0.0;   // (1/n) Σ ||g_i||₁
  double mean_loss = 0.0;
  std::size_t count = 0;
};

/// Visits the masked per-sample gradients of the selected samples in order.
inline GradientSummary masked_gradients(const Network& net, const LabeledDataset& ds,
                                        std::span<const std::size_t> indices, const Tensor& delta, const Mask& mask,
                                        const ClassMap& h, SampleLoss kind = SampleLoss::CrossEntropy,
                                        const std::function<void(std::size_t, const std::vector<double>&)>& visit = {}) {
  detail::check_program_inputs(net, ds, delta, mask);
  if (indices.empty()) throw ArgumentError("gradient over an empty batch");
  GradientSummary s{Tensor(net.input_shape)};
  Tensor x(net.input_shape);
  const auto& m = mask.values.data;
  for (std::size_t i : indices) {
    detail::perturb_into(ds.sample_view(i), delta, mask, x);
    auto sg = input_gradient(net, x, h(ds.labels[i]), kind);
    double l1 = 0.0;
    for (std::size_t k = 0; k < sg.grad.size(); ++k) {
      sg.grad[k] *= m[k];
      s.mean.data[k] += sg.grad[k];
      l1 += std::abs(sg.grad[k]);
    }
    s.mean_l1 += l1;
    s.mean_loss += sg.loss;
    if (visit) visit(i, sg.grad);
  }
  const double inv = 1.0 / static_cast<double>(indices.size());
  for (double& v : s.mean.data) v *= inv;
  s.mean_l1 *= inv;
  s.mean_loss *= inv;
  s.count = indices.size();
  return s;
}

inline std::vector<std::size_t> all_indices(const LabeledDataset& ds) {
  std::vector<std::size_t> idx(ds.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return idx;
}

/// Average masked input gradient over a batch.
inline Tensor average_masked_gradient(const Network& net, const LabeledDataset& batch, const Tensor& delta,
                                      const Mask& mask, const ClassMap& h,
                                      SampleLoss kind = SampleLoss::CrossEntropy) {
  return masked_gradients(net, batch, all_indices(batch), delta, mask, h, kind).mean;
}

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

/// Throws unless every masked coordinate of every sample is zero.
inline void require_zero_frame(const LabeledDataset& ds, const Mask& mask) {
  if (ds.sample_shape() != mask.shape())
    throw DimensionError("dataset samples " + to_string(ds.sample_shape()) + " do not match mask " +
                         to_string(mask.shape()));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto x = ds.sample_view(i);
    for (std::size_t k = 0; k < x.size(); ++k)
      if (mask.values.data[k] != 0.0 && x[k] != 0.0)
        throw PreconditionError("sample " + std::to_string(i) + " of " + ds.name +
                                " is nonzero under the mask at coordinate " + std::to_string(k));
  }
}

// ---------------------------------------------------------------------------
// Sign-gradient projected descent over the program
// ---------------------------------------------------------------------------

/// State after one program update, for observers.
struct StepEvent {
  int epoch = 0;
  std::size_t batch = 0;
  const Tensor& delta;
  const Tensor& gradient;
};

using StepObserver = std::function<void(const StepEvent&)>;

/// Optimizes δ over optSet with per-batch updates δ ← Π(δ − η·sign(g)) and
/// keeps the iterate with the lowest selection loss seen at epoch ends.
/// The network is never modified.
inline Program optimize_program(const Network& net, const LabeledDataset& opt_set, const LabeledDataset& eval_set,
                                const Mask& mask, const ClassMap& h, const ReprogramConfig& cfg,
                                const StepObserver& observer = {}) {
  cfg.validate();
  if (cfg.batch_size > opt_set.size())
    throw ConfigError("batch size " + std::to_string(cfg.batch_size) + " exceeds optimization set of " +
                      std::to_string(opt_set.size()));
  require_zero_frame(opt_set, mask);
  require_zero_frame(eval_set, mask);
  const LabeledDataset& selection = cfg.held_out_eval ? eval_set : opt_set;

  Program prog = zero_program(net.input_shape);
  Tensor delta(net.input_shape);
  prog.initial_loss = reprogramming_loss(net, selection, delta, mask, h, cfg.loss);
  if (!std::isfinite(prog.initial_loss)) throw NumericError("non-finite initial loss");
  if (cfg.epochs == 0) prog.best_loss = prog.initial_loss;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto batches = make_batches(opt_set.size(), cfg.batch_size, cfg.seed, static_cast<std::uint64_t>(epoch));
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto g = masked_gradients(net, opt_set, batches[b], delta, mask, h, cfg.loss).mean;
      for (std::size_t k = 0; k < delta.size(); ++k)
        delta.data[k] = std::clamp(delta.data[k] - cfg.eta * sign(g.data[k]), -1.0, 1.0);
      if (observer) observer(StepEvent{epoch, b, delta, g});
    }
    const double loss = reprogramming_loss(net, selection, delta, mask, h, cfg.loss);
    if (!std::isfinite(loss)) throw NumericError("non-finite evaluation loss at epoch " + std::to_string(epoch));
    prog.history.push_back(loss);
    if (loss < prog.best_loss) {
      prog.best_loss = loss;
      prog.delta = delta;
      prog.best_epoch = epoch;
    }
  }
  return prog;
}

// ---------------------------------------------------------------------------
// Program checkpoint: delta.tnsr + program.json
// ---------------------------------------------------------------------------

inline void save_program(const std::filesystem::path& dir, const Program& prog, const nlohmann::json& sidecar) {
  std::filesystem::create_directories(dir);
  save_tensor(dir / "delta.tnsr", prog.delta);
  nlohmann::json j = sidecar.is_object() ? sidecar : nlohmann::json::object();
  j["best_loss"] = prog.best_loss;
  j["initial_loss"] = prog.initial_loss;
  j["history"] = prog.history;
  j["best_epoch"] = prog.best_epoch;
  std::ofstream os(dir / "program.json");
  if (!os) throw IoError("cannot write " + (dir / "program.json").string());
  os << j.dump(2) << '\n';
}

inline std::pair<Program, nlohmann::json> load_program(const std::filesystem::path& dir) {
  std::ifstream is(dir / "program.json");
  if (!is) throw IoError("cannot open " + (dir / "program.json").string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
    Program p;
    p.delta = load_tensor(dir / "delta.tnsr");
    p.best_loss = j.at("best_loss").get<double>();
    p.initial_loss = j.at("initial_loss").get<double>();
    p.history = j.at("history").get<std::vector<double>>();
    p.best_epoch = j.at("best_epoch").get<int>();
    return {std::move(p), j};
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed program sidecar in " + dir.string() + ": " + e.what());
  }
}

}  // namespace advrep
