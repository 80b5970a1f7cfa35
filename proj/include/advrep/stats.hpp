#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"

namespace advrep::stats {

enum class Method { Pearson, Spearman, Kendall };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::Pearson:
      return "pearson";
    case Method::Spearman:
      return "spearman";
    case Method::Kendall:
      return "kendall";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "pearson" || s == "P") return Method::Pearson;
  if (s == "spearman" || s == "S") return Method::Spearman;
  if (s == "kendall" || s == "K") return Method::Kendall;
  throw ArgumentError("unknown correlation method '" + s + "'");
}

struct CorrelationResult {
  Method method = Method::Pearson;
  double coefficient = 0.0;
  double p_value = 1.0;
  std::size_t n_permutations = 0;
  std::uint64_t seed = 0;
  bool exact = false;  // p-value from full enumeration rather than sampling
};

namespace detail {

inline void check_pair(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size())
    throw ArgumentError("correlation inputs differ in length (" + std::to_string(x.size()) + " vs " +
                        std::to_string(y.size()) + ")");
  if (x.size() < 3) throw ArgumentError("correlation needs at least 3 observations");
}

}  // namespace detail

/// Sample Pearson product-moment coefficient.
inline double pearson(std::span<const double> x, std::span<const double> y) {
  detail::check_pair(x, y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw DegenerateError("correlation of a constant vector is undefined");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// 1-based ranks; tied values share the mean of their rank span.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

inline double spearman(std::span<const double> x, std::span<const double> y) {
  detail::check_pair(x, y);
  const auto rx = average_ranks(x), ry = average_ranks(y);
  return pearson(rx, ry);
}

/// Kendall tau-b in O(n log n) (Knight's merge-sort count).
inline double kendall_tau(std::span<const double> x, std::span<const double> y) {
  detail::check_pair(x, y);
  const std::size_t n = x.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return x[a] < x[b] || (x[a] == x[b] && y[a] < y[b]);
  });

  auto tie_pairs = [](std::uint64_t run) { return run * (run - 1) / 2; };
  std::uint64_t ties_x = 0, ties_xy = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) ++j;
    ties_x += tie_pairs(j - i + 1);
    for (std::size_t a = i; a <= j;) {
      std::size_t b = a;
      while (b + 1 <= j && y[idx[b + 1]] == y[idx[a]]) ++b;
      ties_xy += tie_pairs(b - a + 1);
      a = b + 1;
    }
    i = j + 1;
  }

  // Sorting the y sequence counts the discordant pairs as swaps.
  std::vector<double> ys(n), buf(n);
  for (std::size_t i = 0; i < n; ++i) ys[i] = y[idx[i]];
  std::uint64_t swaps = 0;
  for (std::size_t width = 1; width < n; width *= 2) {
    for (std::size_t lo = 0; lo < n; lo += 2 * width) {
      const std::size_t mid = std::min(lo + width, n), hi = std::min(lo + 2 * width, n);
      std::size_t a = lo, b = mid, k = lo;
      while (a < mid && b < hi) {
        if (ys[b] < ys[a]) {
          swaps += mid - a;
          buf[k++] = ys[b++];
        } else {
          buf[k++] = ys[a++];
        }
      }
      while (a < mid) buf[k++] = ys[a++];
      while (b < hi) buf[k++] = ys[b++];
    }
    ys.swap(buf);
  }
  std::uint64_t ties_y = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && ys[j + 1] == ys[i]) ++j;
    ties_y += tie_pairs(j - i + 1);
    i = j + 1;
  }

  const std::uint64_t pairs = tie_pairs(n);
  if (ties_x == pairs || ties_y == pairs) throw DegenerateError("kendall tau of a fully tied vector is undefined");
  const double discordant = static_cast<double>(swaps);
  const double concordant =
      static_cast<double>(pairs) - static_cast<double>(ties_x) - static_cast<double>(ties_y) +
      static_cast<double>(ties_xy) - discordant;
  const double denom = std::sqrt(static_cast<double>(pairs - ties_x) * static_cast<double>(pairs - ties_y));
  return std::clamp((concordant - discordant) / denom, -1.0, 1.0);
}

inline double correlate(Method m, std::span<const double> x, std::span<const double> y) {
  switch (m) {
    case Method::Pearson:
      return pearson(x, y);
    case Method::Spearman:
      return spearman(x, y);
    case Method::Kendall:
      return kendall_tau(x, y);
  }
  throw ArgumentError("unknown correlation method");
}

/// Permuted statistics within this distance of the observed one count as ties.
inline constexpr double kPermutationTolerance = 1e-12;

inline std::uint64_t factorial_capped(std::size_t n, std::uint64_t cap) {
  std::uint64_t f = 1;
  for (std::size_t k = 2; k <= n; ++k) {
    f *= k;
    if (f > cap) return cap + 1;
  }
  return f;
}

/// Two-sided permutation test of the correlation between x and y.
///
/// Permutations of y are drawn from per-permutation streams derived from
/// seed, and p = (#{|ρ_perm| ≥ |ρ_obs|} + 1) / (P + 1). When P is at least
/// n!, all n! permutations are enumerated instead and p is the exact fraction.
inline CorrelationResult permutation_pvalue(std::span<const double> x, std::span<const double> y, Method method,
                                            std::size_t n_permutations, std::uint64_t seed) {
  if (n_permutations < 99) throw ArgumentError("permutation test needs at least 99 permutations");
  CorrelationResult r{method, correlate(method, x, y), 1.0, n_permutations, seed, false};
  const double threshold = std::abs(r.coefficient) - kPermutationTolerance;
  std::vector<double> perm(y.begin(), y.end());

  const std::uint64_t total = factorial_capped(y.size(), n_permutations);
  if (total <= n_permutations) {
    // Heap's algorithm visits every arrangement exactly once.
    std::uint64_t hits = 0;
    std::vector<std::size_t> c(perm.size(), 0);
    auto visit = [&] { hits += std::abs(correlate(method, x, perm)) >= threshold; };
    visit();
    for (std::size_t i = 1; i < perm.size();) {
      if (c[i] < i) {
        std::swap(perm[i % 2 == 0 ? 0 : c[i]], perm[i]);
        visit();
        ++c[i];
        i = 1;
      } else {
        c[i] = 0;
        ++i;
      }
    }
    r.p_value = static_cast<double>(hits) / static_cast<double>(total);
    r.n_permutations = static_cast<std::size_t>(total);
    r.exact = true;
    return r;
  }

  std::uint64_t hits = 0;
  for (std::size_t p = 0; p < n_permutations; ++p) {
    std::copy(y.begin(), y.end(), perm.begin());
    Rng rng = Rng::derive(seed, {0x9e47ULL, p});
    rng.shuffle(std::span<double>(perm));
    hits += std::abs(correlate(method, x, perm)) >= threshold;
  }
  r.p_value = static_cast<double>(hits + 1) / static_cast<double>(n_permutations + 1);
  return r;
}

}  // namespace advrep::stats
