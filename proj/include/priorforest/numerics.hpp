#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <string>

#include "priorforest/error.hpp"

namespace priorforest {

inline double logit(double p) { return std::log(p) - std::log1p(-p); }
inline double expit(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }
// log(1 + e^x) without overflow.
inline double log1pexp(double x) { return x > 35 ? x : (x < -35 ? std::exp(x) : std::log1p(std::exp(x))); }
inline double log_expit(double x) { return -log1pexp(-x); }

/// Root of a monotone f on [lo, hi] by bisection. Throws root_bracket when
/// f(lo) and f(hi) have the same sign. With `log_scale` the midpoint is taken
/// geometrically (lo must be positive).
inline double bisect(const std::function<double(double)>& f, double lo, double hi, double rel_tol = 1e-10,
                     bool log_scale = false, const std::string& what = "root", int max_iter = 400) {
  double flo = f(lo);
  double fhi = f(hi);
  if (flo == 0) return lo;
  if (fhi == 0) return hi;
  if ((flo > 0) == (fhi > 0)) {
    throw Error(ErrorCode::root_bracket, "could not bracket " + what + " in [" + std::to_string(lo) + ", " +
                                             std::to_string(hi) + "]");
  }
  for (int it = 0; it < max_iter; ++it) {
    const double mid = log_scale ? std::sqrt(lo * hi) : 0.5 * (lo + hi);
    const double fm = f(mid);
    if (fm == 0) return mid;
    if ((fm > 0) == (flo > 0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
    if (std::abs(hi - lo) <= rel_tol * std::max(std::abs(lo), std::abs(hi))) break;
  }
  return log_scale ? std::sqrt(lo * hi) : 0.5 * (lo + hi);
}

}  // namespace priorforest
