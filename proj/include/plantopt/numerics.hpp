#pragma once

#include <cmath>
#include <numbers>
#include <utility>

namespace plantopt::numerics {

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// Upper tail 1 - Phi(x), accurate for large positive x.
inline double normal_sf(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

inline double sign(double x) { return (x > 0.0) - (x < 0.0); }

/// Bisection for a nonincreasing or nondecreasing f on [lo, hi] with a sign
/// change of f - target. Runs until the bracket stops shrinking.
template <class F>
double bisect(F&& f, double target, double lo, double hi) {
  const bool increasing = f(hi) >= f(lo);
  for (int it = 0; it < 400; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    const double v = f(mid);
    if ((v < target) == increasing) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

/// log(1 + exp(t)) without overflow.
inline double softplus(double t) { return t > 35.0 ? t : std::log1p(std::exp(t)); }

/// log(exp(a) + exp(b)).
inline double log_add(double a, double b) {
  if (a < b) std::swap(a, b);
  if (b == -INFINITY) return a;
  return a + std::log1p(std::exp(b - a));
}

}  // namespace plantopt::numerics
