#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "class_map.hpp"
#include "datasets.hpp"
#include "errors.hpp"
#include "models.hpp"
#include "reprogram.hpp"
#include "tensor.hpp"

namespace advrep {

/// One experiment row.
struct MetricsRecord {
  std::string source_name;
  std::string target_name;
  std::string model_tag;
  bool trained = true;
  double da = 0.0;
  double ra = 0.0;
  double r0 = 0.0;
  double rn = 0.0;
  std::size_t mask_size = 0;
  double g_l1 = 0.0;
  std::uint64_t seed = 0;
  std::string config_hash;
};

inline double l1_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += std::abs(x);
  return s;
}

/// r = ||g||₁ / mean ||g_i||₁ from precomputed parts; 0 when the denominator is 0.
/// The ratio cannot exceed 1 by the triangle inequality; the clamp absorbs
/// rounding in the two separately accumulated sums.
inline double alignment_ratio(double mean_gradient_l1, double mean_of_l1) {
  return mean_of_l1 > 0.0 ? std::min(1.0, mean_gradient_l1 / mean_of_l1) : 0.0;
}

/// Gradient-alignment metric over a set of (masked) input gradients.
inline double gradient_alignment(std::span<const Tensor> gradients) {
  if (gradients.empty()) throw ArgumentError("gradient alignment needs at least one gradient");
  const std::size_t d = gradients.front().size();
  std::vector<double> mean(d, 0.0);
  double mean_l1 = 0.0;
  for (const auto& g : gradients) {
    if (g.size() != d) throw DimensionError("gradients must share a shape");
    for (std::size_t k = 0; k < d; ++k) mean[k] += g.data[k];
    mean_l1 += l1_norm(g.data);
  }
  const double n = static_cast<double>(gradients.size());
  for (double& v : mean) v /= n;
  return alignment_ratio(l1_norm(mean), mean_l1 / n);
}

inline double gradient_alignment(const GradientSummary& s) {
  return alignment_ratio(l1_norm(s.mean.data), s.mean_l1);
}

/// Predicted labels for x_i + δ∘M over a dataset.
inline std::vector<int> predict_programmed(const Network& net, const LabeledDataset& ds, const Tensor& delta,
                                           const Mask& mask) {
  detail::check_program_inputs(net, ds, delta, mask);
  std::vector<int> out(ds.size());
  Tensor x(net.input_shape);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    detail::perturb_into(ds.sample_view(i), delta, mask, x);
    out[i] = argmax(logits_of(net, x));
  }
  return out;
}

/// Accuracy of the perturbed samples against the mapped labels.
inline double reprogramming_accuracy(const Network& net, const LabeledDataset& ds, const Tensor& delta,
                                     const Mask& mask, const ClassMap& h) {
  return accuracy_of(predict_programmed(net, ds, delta, mask), ds.labels, h);
}

/// Accuracy under h of the zero-padded samples, i.e. with no program.
inline double domain_alignment(const Network& net, const LabeledDataset& ds, const ClassMap& h) {
  const Tensor zero(net.input_shape);
  const Mask none{Tensor(net.input_shape)};
  return reprogramming_accuracy(net, ds, zero, none, h);
}

struct AlignmentPair {
  double r0 = 0.0;
  double rn = 0.0;
  double g0_l1 = 0.0;  // ||g||₁ at δ = 0
  double gn_l1 = 0.0;  // ||g||₁ at δ = δ*
};

/// Alignment of the masked per-sample gradients before (δ = 0) and after (δ*)
/// reprogramming, over the whole evaluation set.
inline AlignmentPair alignment_before_after(const Network& net, const LabeledDataset& eval_set, const Mask& mask,
                                            const ClassMap& h, const Program& prog,
                                            SampleLoss kind = SampleLoss::CrossEntropy) {
  const auto idx = all_indices(eval_set);
  const auto before = masked_gradients(net, eval_set, idx, Tensor(net.input_shape), mask, h, kind);
  const auto after = masked_gradients(net, eval_set, idx, prog.delta, mask, h, kind);
  return {gradient_alignment(before), gradient_alignment(after), l1_norm(before.mean.data), l1_norm(after.mean.data)};
}

/// Norms supported by the dual-norm loss predictor.
enum class PNorm { L1, L2, LInf };

inline double lq_norm(std::span<const double> g, PNorm q) {
  switch (q) {
    case PNorm::L1:
      return l1_norm(g);
    case PNorm::L2: {
      double s = 0.0;
      for (double v : g) s += v * v;
      return std::sqrt(s);
    }
    case PNorm::LInf: {
      double m = 0.0;
      for (double v : g) m = std::max(m, std::abs(v));
      return m;
    }
  }
  return 0.0;
}

inline PNorm dual_of(PNorm p) {
  switch (p) {
    case PNorm::L1:
      return PNorm::LInf;
    case PNorm::L2:
      return PNorm::L2;
    case PNorm::LInf:
      return PNorm::L1;
  }
  return PNorm::L2;
}

inline PNorm parse_pnorm(const std::string& s) {
  if (s == "1") return PNorm::L1;
  if (s == "2") return PNorm::L2;
  if (s == "inf" || s == "Inf" || s == "infinity") return PNorm::LInf;
  throw ArgumentError("unsupported norm '" + s + "', expected 1, 2 or inf");
}

/// First-order optimum of δᵀg over the ε-ball of the p-norm: −ε·||g||_q with
/// q the dual exponent of p.
inline double predicted_loss_drop(std::span<const double> g, PNorm p, double epsilon) {
  if (!(epsilon >= 0.0)) throw ArgumentError("epsilon must be >= 0");
  return -epsilon * lq_norm(g, dual_of(p));
}

/// First-order model of the loss around δ = 0: L(0) + δᵀg with g the average
/// masked input gradient at δ = 0.
inline double linearized_loss(const Network& net, const LabeledDataset& batch, const Mask& mask, const ClassMap& h,
                              const Tensor& delta, SampleLoss kind = SampleLoss::CrossEntropy) {
  const auto s = masked_gradients(net, batch, all_indices(batch), Tensor(net.input_shape), mask, h, kind);
  double dot = 0.0;
  for (std::size_t k = 0; k < delta.size(); ++k) dot += delta.data[k] * s.mean.data[k];
  return s.mean_loss + dot;
}

/// Rows are true target classes; columns are predictions pulled back through
/// h, with one extra trailing "other" column for sources outside range(h).
struct ConfusionMatrix {
  std::size_t classes = 0;
  std::vector<std::size_t> counts;  // classes × (classes + 1)

  std::size_t at(std::size_t row, std::size_t col) const { return counts[row * (classes + 1) + col]; }

  std::size_t row_sum(std::size_t row) const {
    std::size_t s = 0;
    for (std::size_t c = 0; c <= classes; ++c) s += at(row, c);
    return s;
  }

  std::size_t column_sum(std::size_t col) const {
    std::size_t s = 0;
    for (std::size_t r = 0; r < classes; ++r) s += at(r, col);
    return s;
  }

  std::size_t total() const {
    std::size_t s = 0;
    for (auto c : counts) s += c;
    return s;
  }

  /// Fraction of all samples falling in the most populated column.
  double majority_column_fraction() const {
    std::size_t best = 0;
    for (std::size_t c = 0; c <= classes; ++c) best = std::max(best, column_sum(c));
    return total() ? static_cast<double>(best) / static_cast<double>(total()) : 0.0;
  }
};

inline ConfusionMatrix confusion_from(std::span<const int> predicted_source, std::span<const int> labels,
                                      const ClassMap& h) {
  const std::size_t k = h.size();
  ConfusionMatrix cm{k, std::vector<std::size_t>(k * (k + 1), 0)};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto row = static_cast<std::size_t>(labels[i]);
    if (row >= k) throw LabelError("target label " + std::to_string(labels[i]) + " outside class map");
    const int back = h.inverse(predicted_source[i]);
    const std::size_t col = back < 0 ? k : static_cast<std::size_t>(back);
    ++cm.counts[row * (k + 1) + col];
  }
  return cm;
}

inline ConfusionMatrix confusion_matrix(const Network& net, const LabeledDataset& ds, const Tensor& delta,
                                        const Mask& mask, const ClassMap& h) {
  return confusion_from(predict_programmed(net, ds, delta, mask), ds.labels, h);
}

}  // namespace advrep
