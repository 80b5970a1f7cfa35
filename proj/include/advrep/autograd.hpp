#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace advrep {

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so the
/// recording order is already topological and backward is a reverse sweep.
///
/// A tape is single-threaded; independent tapes may be used concurrently as
/// long as they do not share mutable leaves.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::span<const double> out_grad)>;

  /// Leaf referencing a caller-owned tensor. If the tensor has requires_grad
  /// set, backward() adds its gradient into tensor.grad.
  Var leaf(Tensor& t) {
    Node n;
    n.ref = &t;
    n.sink = t.requires_grad ? &t : nullptr;
    n.requires_grad = t.requires_grad;
    return push(std::move(n));
  }

  /// Non-differentiable view of a caller-owned tensor (no copy).
  Var constant(const Tensor& t) {
    Node n;
    n.ref = &t;
    return push(std::move(n));
  }

  /// Tape-owned leaf. Its gradient is read back with grad().
  Var input(Tensor t, bool requires_grad) {
    Node n;
    n.owned = std::move(t);
    n.requires_grad = requires_grad;
    return push(std::move(n));
  }

  /// Records the result of a primitive. The node requires a gradient iff one
  /// of its inputs does; otherwise the backward rule is dropped.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    Node n;
    n.owned = std::move(value);
    for (auto in : inputs) n.requires_grad = n.requires_grad || nodes_.at(in.id).requires_grad;
    if (n.requires_grad) n.backward = std::move(fn);
    return push(std::move(n));
  }

  const Tensor& value(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.ref ? *n.ref : n.owned;
  }

  const Shape& shape(Var v) const { return value(v).shape; }

  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  std::size_t size() const { return nodes_.size(); }

  /// Mutable gradient accumulator of a node, or an empty span when the node
  /// does not require a gradient. Used by backward rules.
  std::span<double> grad_sink(Var v) {
    Node& n = nodes_.at(v.id);
    if (!n.requires_grad) return {};
    if (n.grad.empty()) n.grad.assign(value(v).size(), 0.0);
    return n.grad;
  }

  /// Gradient of a node after backward(); zeros if nothing flowed into it.
  std::vector<double> grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.empty()) return std::vector<double>(value(v).size(), 0.0);
    return n.grad;
  }

  /// Propagates d(loss)/d(node) for every node reachable from loss.
  void backward(Var loss) {
    const Tensor& l = value(loss);
    if (l.size() != 1)
      throw RankError("backward() needs a scalar loss, got shape " + to_string(l.shape));
    if (!nodes_.at(loss.id).requires_grad) return;
    grad_sink(loss)[0] += 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty()) continue;
      // Rules only touch grad buffers of earlier nodes; nodes_ never grows here.
      if (n.backward) n.backward(*this, n.grad);
      if (n.sink) {
        if (!n.sink->grad) n.sink->zero_grad();
        auto& g = *n.sink->grad;
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += n.grad[k];
      }
    }
  }

 private:
  struct Node {
    Tensor owned;
    const Tensor* ref = nullptr;
    Tensor* sink = nullptr;
    bool requires_grad = false;
    std::vector<double> grad;
    BackwardFn backward;
  };

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

/// C = A·B for A [m×k], B [k×n].
inline Var matmul(Tape& tape, Var a, Var b) {
  const Tensor& A = tape.value(a);
  const Tensor& B = tape.value(b);
  if (A.rank() != 2 || B.rank() != 2 || A.shape[1] != B.shape[0])
    throw DimensionError("matmul shape mismatch: " + to_string(A.shape) + " x " + to_string(B.shape));
  const std::size_t m = A.shape[0], k = A.shape[1], n = B.shape[1];
  Tensor C({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double* c = C.data.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A.data[i * k + p];
      const double* brow = B.data.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
    }
  }
  return tape.record(std::move(C), {a, b}, [a, b, m, k, n](Tape& t, std::span<const double> dC) {
    const auto& Av = t.value(a).data;
    const auto& Bv = t.value(b).data;
    if (auto dA = t.grad_sink(a); !dA.empty()) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = Bv.data() + p * n;
          const double* drow = dC.data() + i * n;
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += drow[j] * brow[j];
          dA[i * k + p] += s;
        }
    }
    if (auto dB = t.grad_sink(b); !dB.empty()) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = Av[i * k + p];
          if (av == 0.0) continue;
          double* brow = dB.data() + p * n;
          const double* drow = dC.data() + i * n;
          for (std::size_t j = 0; j < n; ++j) brow[j] += av * drow[j];
        }
    }
  });
}

/// Elementwise a + b, identical shapes.
inline Var add(Tape& tape, Var a, Var b) {
  const Tensor& A = tape.value(a);
  const Tensor& B = tape.value(b);
  if (A.shape != B.shape)
    throw DimensionError("add shape mismatch: " + to_string(A.shape) + " vs " + to_string(B.shape));
  Tensor C = A;
  C.requires_grad = false;
  C.grad.reset();
  for (std::size_t i = 0; i < C.size(); ++i) C.data[i] += B.data[i];
  return tape.record(std::move(C), {a, b}, [a, b](Tape& t, std::span<const double> g) {
    for (Var v : {a, b})
      if (auto d = t.grad_sink(v); !d.empty())
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
  });
}

/// Elementwise a ∘ b, identical shapes.
inline Var mul(Tape& tape, Var a, Var b) {
  const Tensor& A = tape.value(a);
  const Tensor& B = tape.value(b);
  if (A.shape != B.shape)
    throw DimensionError("mul shape mismatch: " + to_string(A.shape) + " vs " + to_string(B.shape));
  Tensor C(A.shape);
  for (std::size_t i = 0; i < C.size(); ++i) C.data[i] = A.data[i] * B.data[i];
  return tape.record(std::move(C), {a, b}, [a, b](Tape& t, std::span<const double> g) {
    const auto& Av = t.value(a).data;
    const auto& Bv = t.value(b).data;
    if (auto d = t.grad_sink(a); !d.empty())
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * Bv[i];
    if (auto d = t.grad_sink(b); !d.empty())
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * Av[i];
  });
}

inline Var scale(Tape& tape, Var x, double s) {
  const Tensor& X = tape.value(x);
  Tensor Y(X.shape);
  for (std::size_t i = 0; i < Y.size(); ++i) Y.data[i] = s * X.data[i];
  return tape.record(std::move(Y), {x}, [x, s](Tape& t, std::span<const double> g) {
    auto d = t.grad_sink(x);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s * g[i];
  });
}

/// Sum of all entries, returned as a shape-[1] tensor.
inline Var sum(Tape& tape, Var x) {
  const Tensor& X = tape.value(x);
  double s = 0.0;
  for (double v : X.data) s += v;
  return tape.record(Tensor({1}, {s}), {x}, [x](Tape& t, std::span<const double> g) {
    auto d = t.grad_sink(x);
    for (auto& v : d) v += g[0];
  });
}

/// Inner product of two same-shaped tensors, shape-[1] result.
inline Var dot(Tape& tape, Var a, Var b) { return sum(tape, mul(tape, a, b)); }

inline Var reshape(Tape& tape, Var x, Shape shape) {
  const Tensor& X = tape.value(x);
  if (numel(shape) != X.size())
    throw DimensionError("cannot reshape " + to_string(X.shape) + " to " + to_string(shape));
  Tensor Y(std::move(shape), X.data);
  return tape.record(std::move(Y), {x}, [x](Tape& t, std::span<const double> g) {
    auto d = t.grad_sink(x);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
  });
}

/// Adds bias[j] to column j of a rank-2 tensor [m×n].
inline Var add_row_bias(Tape& tape, Var x, Var bias) {
  const Tensor& X = tape.value(x);
  const Tensor& b = tape.value(bias);
  if (X.rank() != 2 || b.size() != X.shape[1])
    throw DimensionError("row bias " + to_string(b.shape) + " does not fit " + to_string(X.shape));
  const std::size_t m = X.shape[0], n = X.shape[1];
  Tensor Y = Tensor(X.shape, X.data);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) Y.data[i * n + j] += b.data[j];
  return tape.record(std::move(Y), {x, bias}, [x, bias, m, n](Tape& t, std::span<const double> g) {
    if (auto d = t.grad_sink(x); !d.empty())
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
    if (auto d = t.grad_sink(bias); !d.empty())
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) d[j] += g[i * n + j];
  });
}

/// Adds bias[c] to every element of channel c of a [C×H×W] tensor.
inline Var add_channel_bias(Tape& tape, Var x, Var bias) {
  const Tensor& X = tape.value(x);
  const Tensor& b = tape.value(bias);
  if (X.rank() != 3 || b.size() != X.shape[0])
    throw DimensionError("channel bias " + to_string(b.shape) + " does not fit " + to_string(X.shape));
  const std::size_t C = X.shape[0], plane = X.shape[1] * X.shape[2];
  Tensor Y = Tensor(X.shape, X.data);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < plane; ++i) Y.data[c * plane + i] += b.data[c];
  return tape.record(std::move(Y), {x, bias}, [x, bias, C, plane](Tape& t, std::span<const double> g) {
    if (auto d = t.grad_sink(x); !d.empty())
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
    if (auto d = t.grad_sink(bias); !d.empty())
      for (std::size_t c = 0; c < C; ++c) {
        double s = 0.0;
        for (std::size_t i = 0; i < plane; ++i) s += g[c * plane + i];
        d[c] += s;
      }
  });
}

/// Frozen per-channel affine transform (x - mean[c]) / stddev[c].
inline Var standardize(Tape& tape, Var x, std::span<const double> mean, std::span<const double> stddev) {
  const Tensor& X = tape.value(x);
  if (X.rank() != 3 || mean.size() != X.shape[0] || stddev.size() != X.shape[0])
    throw DimensionError("standardization stats do not match input " + to_string(X.shape));
  const std::size_t C = X.shape[0], plane = X.shape[1] * X.shape[2];
  std::vector<double> inv(C);
  for (std::size_t c = 0; c < C; ++c) inv[c] = 1.0 / stddev[c];
  Tensor Y(X.shape);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < plane; ++i)
      Y.data[c * plane + i] = (X.data[c * plane + i] - mean[c]) * inv[c];
  return tape.record(std::move(Y), {x}, [x, inv, plane](Tape& t, std::span<const double> g) {
    auto d = t.grad_sink(x);
    for (std::size_t c = 0; c < inv.size(); ++c)
      for (std::size_t i = 0; i < plane; ++i) d[c * plane + i] += g[c * plane + i] * inv[c];
  });
}

inline Var relu(Tape& tape, Var x) {
  const Tensor& X = tape.value(x);
  Tensor Y(X.shape);
  for (std::size_t i = 0; i < Y.size(); ++i) Y.data[i] = X.data[i] > 0.0 ? X.data[i] : 0.0;
  return tape.record(std::move(Y), {x}, [x](Tape& t, std::span<const double> g) {
    const auto& Xv = t.value(x).data;
    auto d = t.grad_sink(x);
    for (std::size_t i = 0; i < d.size(); ++i)
      if (Xv[i] > 0.0) d[i] += g[i];
  });
}

/// Inverted dropout: zeroes each entry with probability rate and rescales
/// survivors by 1/(1-rate).
inline Var dropout(Tape& tape, Var x, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ArgumentError("dropout rate must be in [0,1)");
  const Tensor& X = tape.value(x);
  std::vector<double> keep(X.size());
  const double s = 1.0 / (1.0 - rate);
  for (auto& k : keep) k = rng.uniform() < rate ? 0.0 : s;
  Tensor Y(X.shape);
  for (std::size_t i = 0; i < Y.size(); ++i) Y.data[i] = X.data[i] * keep[i];
  return tape.record(std::move(Y), {x}, [x, keep = std::move(keep)](Tape& t, std::span<const double> g) {
    auto d = t.grad_sink(x);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * keep[i];
  });
}

inline std::size_t conv_output_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

/// Cross-correlation of x [Ci×H×W] with kernels [Co×Ci×kH×kW], zero padding.
inline Var conv2d(Tape& tape, Var x, Var kernels, std::size_t stride = 1, std::size_t padding = 0) {
  const Tensor& X = tape.value(x);
  const Tensor& K = tape.value(kernels);
  if (X.rank() != 3 || K.rank() != 4 || K.shape[1] != X.shape[0])
    throw DimensionError("conv2d shape mismatch: input " + to_string(X.shape) + ", kernels " +
                         to_string(K.shape));
  if (stride == 0) throw DimensionError("conv2d stride must be >= 1");
  const std::size_t Ci = X.shape[0], H = X.shape[1], W = X.shape[2];
  const std::size_t Co = K.shape[0], kH = K.shape[2], kW = K.shape[3];
  if (kH > H + 2 * padding || kW > W + 2 * padding)
    throw DimensionError("conv2d kernel " + to_string(K.shape) + " larger than padded input " +
                         to_string(X.shape));
  const std::size_t Ho = conv_output_extent(H, kH, stride, padding);
  const std::size_t Wo = conv_output_extent(W, kW, stride, padding);
  const auto p = static_cast<std::ptrdiff_t>(padding);
  const auto s = static_cast<std::ptrdiff_t>(stride);

  // Valid output column range [lo, hi) for kernel column kx.
  auto col_range = [=](std::size_t kx) {
    const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kx) - p;
    std::ptrdiff_t lo = off >= 0 ? 0 : (-off + s - 1) / s;
    std::ptrdiff_t hi = (static_cast<std::ptrdiff_t>(W) - 1 - off) / s + 1;
    if (static_cast<std::ptrdiff_t>(W) - 1 - off < 0) hi = 0;
    hi = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(Wo));
    return std::pair<std::ptrdiff_t, std::ptrdiff_t>{lo, std::max(lo, hi)};
  };
  // Visits (co, ci, ky, kx, oy, iy, ox range) in a fixed order.
  auto sweep = [=](auto&& body) {
    for (std::size_t co = 0; co < Co; ++co)
      for (std::size_t ci = 0; ci < Ci; ++ci)
        for (std::size_t ky = 0; ky < kH; ++ky)
          for (std::size_t kx = 0; kx < kW; ++kx) {
            const auto [lo, hi] = col_range(kx);
            if (lo >= hi) continue;
            const std::size_t kidx = ((co * Ci + ci) * kH + ky) * kW + kx;
            for (std::size_t oy = 0; oy < Ho; ++oy) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * s + static_cast<std::ptrdiff_t>(ky) - p;
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
              const std::size_t orow = (co * Ho + oy) * Wo;
              const std::size_t irow = (ci * H + static_cast<std::size_t>(iy)) * W;
              body(kidx, orow, irow, lo, hi, static_cast<std::ptrdiff_t>(kx) - p);
            }
          }
  };

  Tensor Y({Co, Ho, Wo});
  {
    const double* in = X.data.data();
    const double* kv = K.data.data();
    double* out = Y.data.data();
    sweep([&](std::size_t kidx, std::size_t orow, std::size_t irow, std::ptrdiff_t lo, std::ptrdiff_t hi,
              std::ptrdiff_t off) {
      const double w = kv[kidx];
      double* o = out + orow;
      const double* r = in + irow;
      if (s == 1) {
        for (std::ptrdiff_t ox = lo; ox < hi; ++ox) o[ox] += w * r[ox + off];
      } else {
        for (std::ptrdiff_t ox = lo; ox < hi; ++ox) o[ox] += w * r[ox * s + off];
      }
    });
  }

  return tape.record(std::move(Y), {x, kernels}, [x, kernels, sweep, s](Tape& t, std::span<const double> g) {
    const double* in = t.value(x).data.data();
    const double* kv = t.value(kernels).data.data();
    auto dX = t.grad_sink(x);
    auto dK = t.grad_sink(kernels);
    if (!dX.empty()) {
      double* dx = dX.data();
      sweep([&](std::size_t kidx, std::size_t orow, std::size_t irow, std::ptrdiff_t lo, std::ptrdiff_t hi,
                std::ptrdiff_t off) {
        const double w = kv[kidx];
        const double* go = g.data() + orow;
        double* r = dx + irow;
        for (std::ptrdiff_t ox = lo; ox < hi; ++ox) r[ox * s + off] += w * go[ox];
      });
    }
    if (!dK.empty()) {
      double* dk = dK.data();
      sweep([&](std::size_t kidx, std::size_t orow, std::size_t irow, std::ptrdiff_t lo, std::ptrdiff_t hi,
                std::ptrdiff_t off) {
        const double* go = g.data() + orow;
        const double* r = in + irow;
        double acc = 0.0;
        for (std::ptrdiff_t ox = lo; ox < hi; ++ox) acc += go[ox] * r[ox * s + off];
        dk[kidx] += acc;
      });
    }
  });
}

/// 2×2 max pooling with stride 2 over a [C×H×W] tensor with even H and W.
/// Ties route the gradient to the lowest flat index of the window.
inline Var maxpool2d(Tape& tape, Var x) {
  const Tensor& X = tape.value(x);
  if (X.rank() != 3) throw DimensionError("maxpool2d expects [C×H×W], got " + to_string(X.shape));
  const std::size_t C = X.shape[0], H = X.shape[1], W = X.shape[2];
  if (H % 2 || W % 2) throw DimensionError("maxpool2d needs even extents, got " + to_string(X.shape));
  const std::size_t Ho = H / 2, Wo = W / 2;
  Tensor Y({C, Ho, Wo});
  std::vector<std::size_t> arg(Y.size());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t oy = 0; oy < Ho; ++oy)
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        const std::size_t base = (c * H + 2 * oy) * W + 2 * ox;
        std::size_t best = base;
        for (std::size_t idx : {base + 1, base + W, base + W + 1})
          if (X.data[idx] > X.data[best]) best = idx;
        const std::size_t o = (c * Ho + oy) * Wo + ox;
        Y.data[o] = X.data[best];
        arg[o] = best;
      }
  return tape.record(std::move(Y), {x}, [x, arg = std::move(arg)](Tape& t, std::span<const double> g) {
    auto d = t.grad_sink(x);
    for (std::size_t o = 0; o < arg.size(); ++o) d[arg[o]] += g[o];
  });
}

/// Mean over rows of -log softmax(logits)[label], shape-[1] result.
inline Var softmax_cross_entropy(Tape& tape, Var logits, std::span<const int> labels) {
  const Tensor& Z = tape.value(logits);
  if (Z.rank() != 2) throw DimensionError("logits must be [n×c], got " + to_string(Z.shape));
  const std::size_t n = Z.shape[0], c = Z.shape[1];
  if (labels.size() != n)
    throw DimensionError("got " + std::to_string(labels.size()) + " labels for " + std::to_string(n) + " rows");
  std::vector<double> probs(n * c);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= c)
      throw LabelError("label " + std::to_string(y) + " at index " + std::to_string(i) + " outside [0," +
                       std::to_string(c) + ")");
    const double* z = Z.data.data() + i * c;
    const double mx = *std::max_element(z, z + c);
    double se = 0.0;
    for (std::size_t j = 0; j < c; ++j) se += std::exp(z[j] - mx);
    const double lse = mx + std::log(se);
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(z[j] - lse);
    loss += lse - z[y];
  }
  loss /= static_cast<double>(n);
  std::vector<int> ys(labels.begin(), labels.end());
  return tape.record(Tensor({1}, {loss}), {logits},
                     [logits, probs = std::move(probs), ys = std::move(ys), n, c](Tape& t, std::span<const double> g) {
                       auto d = t.grad_sink(logits);
                       const double s = g[0] / static_cast<double>(n);
                       for (std::size_t i = 0; i < n; ++i)
                         for (std::size_t j = 0; j < c; ++j) {
                           const double onehot = static_cast<std::size_t>(ys[i]) == j ? 1.0 : 0.0;
                           d[i * c + j] += s * (probs[i * c + j] - onehot);
                         }
                     });
}

}  // namespace advrep
