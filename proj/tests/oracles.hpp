#pragma once

// Independent reference computations used to pin expected values.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace oracle {

inline double simpson(const std::function<double(double)>& f, double a, double b, double fa, double fm, double fb,
                      double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6 * (fa + 4 * flm + fm);
  const double right = (b - m) / 6 * (fm + 4 * frm + fb);
  if (depth <= 0 || std::abs(left + right - whole) <= 15 * tol) return left + right + (left + right - whole) / 15;
  return simpson(f, a, m, fa, flm, fm, left, tol / 2, depth - 1) + simpson(f, m, b, fm, frm, fb, right, tol / 2, depth - 1);
}

inline double integrate(const std::function<double(double)>& f, double a, double b, double tol = 1e-13) {
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  return simpson(f, a, b, fa, fm, fb, (b - a) / 6 * (fa + 4 * fm + fb), tol, 50);
}

// P(logit(1/4) < logit(w) - logit(1/p) < logit(3/4)) for w ~ Beta(a, (p - 1) a).
inline double beta_interval_probability(double a, int p) {
  const double q = p - 1.0;
  const double b = q * a;
  const double lo = 1 / (1 + 3 * q), hi = 3 / (3 + q);
  const double lognorm = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b);
  return integrate([&](double w) { return std::exp(lognorm + (a - 1) * std::log(w) + (b - 1) * std::log1p(-w)); }, lo, hi);
}

inline double dirichlet_alpha(int p) {
  // The interval probability increases with the concentration.
  double lo = 1e-3, hi = 1e3;
  for (int i = 0; i < 200 && hi - lo > 1e-14 * hi; ++i) {
    const double m = std::sqrt(lo * hi);
    (beta_interval_probability(m, p) < 0.5 ? lo : hi) = m;
  }
  return std::sqrt(lo * hi);
}

// 0.5 (tr(S0^-1 S1) - n + log det S0 - log det S1), both matrices full rank.
inline double kld(const Eigen::MatrixXd& S1, const Eigen::MatrixXd& S0) {
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu0(S0);
  const Eigen::MatrixXd M = lu0.solve(S1);
  auto logdet = [](const Eigen::MatrixXd& S) {
    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(S);
    return lu.matrixLU().diagonal().array().abs().log().sum();
  };
  return 0.5 * (M.trace() - static_cast<double>(S0.rows()) + logdet(S0) - logdet(S1));
}

// Two-sample Kolmogorov-Smirnov statistic by merging sorted samples.
inline double ks(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  size_t i = 0, j = 0;
  double d = 0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
  }
  return d;
}

// Asymptotic 1% critical value of the two-sample KS statistic.
inline double ks_critical_1pct(size_t n, size_t m) {
  return 1.6276 * std::sqrt(static_cast<double>(n + m) / (static_cast<double>(n) * static_cast<double>(m)));
}

// One-sided Mann-Whitney p-value for "x tends to be larger than y", normal
// approximation with tie correction.
inline double mann_whitney_greater(const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<std::pair<double, int>> all;
  for (double v : x) all.emplace_back(v, 0);
  for (double v : y) all.emplace_back(v, 1);
  std::sort(all.begin(), all.end());
  const double n1 = static_cast<double>(x.size()), n2 = static_cast<double>(y.size()), N = n1 + n2;
  double r1 = 0, ties = 0;
  for (size_t i = 0; i < all.size();) {
    size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    const double rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    const double t = static_cast<double>(j - i);
    ties += t * t * t - t;
    for (size_t k = i; k < j; ++k) {
      if (all[k].second == 0) r1 += rank;
    }
    i = j;
  }
  const double U = r1 - n1 * (n1 + 1) / 2;
  const double mean = n1 * n2 / 2;
  const double var = n1 * n2 / 12 * ((N + 1) - ties / (N * (N - 1)));
  const double z = (U - mean) / std::sqrt(var);
  return 0.5 * std::erfc(z / std::sqrt(2.0));
}

}  // namespace oracle
