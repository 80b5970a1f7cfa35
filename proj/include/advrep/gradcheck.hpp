#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "autograd.hpp"

namespace advrep {

/// Scalar-valued function expressed on a tape: receives the input variable,
/// returns a one-element result.
using TapeFunction = std::function<Var(Tape&, Var)>;

inline double evaluate(const TapeFunction& f, const Tensor& x) {
  Tape tape;
  Var in = tape.input(x, false);
  const Tensor& out = tape.value(f(tape, in));
  if (out.size() != 1) throw RankError("function under test must be scalar, got " + to_string(out.shape));
  return out[0];
}

inline std::vector<double> analytic_gradient(const TapeFunction& f, const Tensor& x) {
  Tape tape;
  Var in = tape.input(x, true);
  tape.backward(f(tape, in));
  return tape.grad(in);
}

/// Max over coordinates of |analytic - central| / max(1, |central|).
inline double finite_diff_check(const TapeFunction& f, const Tensor& x, double h = 1e-5) {
  if (!(h > 0.0)) throw ArgumentError("finite difference step must be positive");
  const std::vector<double> analytic = analytic_gradient(f, x);
  Tensor probe = x;
  probe.requires_grad = false;
  probe.grad.reset();
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe.data[i];
    probe.data[i] = orig + h;
    const double fp = evaluate(f, probe);
    probe.data[i] = orig - h;
    const double fm = evaluate(f, probe);
    probe.data[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("non-finite function value at coordinate " + std::to_string(i));
    const double central = (fp - fm) / (2.0 * h);
    worst = std::max(worst, std::abs(analytic[i] - central) / std::max(1.0, std::abs(central)));
  }
  return worst;
}

}  // namespace advrep
