#include "priorforest/kernels.hpp"

#include <algorithm>
#include <cmath>
// The boost 1.74 pchip header calls isnan unqualified.
namespace boost::math::interpolators {
using std::isnan;
}
#include <boost/math/interpolators/pchip.hpp>
#include <boost/math/special_functions/beta.hpp>
#include <limits>

#include "priorforest/error.hpp"
#include "priorforest/numerics.hpp"

namespace priorforest {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kRankCut = 1e-10;
}  // namespace

double pc_rate(double U, double alpha) { return -std::log(alpha) / U; }

double pc_stdev_logdensity(double sigma, double U, double alpha) {
  if (sigma < 0) return -kInf;
  const double lam = pc_rate(U, alpha);
  return std::log(lam) - lam * sigma;
}

double pc_stdev_survival(double sigma, double U, double alpha) {
  if (sigma <= 0) return 1.0;
  return std::exp(-pc_rate(U, alpha) * sigma);
}

std::string_view to_string(WeightVariant v) {
  switch (v) {
    case WeightVariant::pc0: return "pc0";
    case WeightVariant::pc1: return "pc1";
    case WeightVariant::pcM: return "pcM";
    case WeightVariant::dirichlet: return "dirichlet";
  }
  return "dirichlet";
}

std::string_view to_string(VarianceVariant v) {
  switch (v) {
    case VarianceVariant::pc0: return "pc0";
    case VarianceVariant::jeffreys: return "jeffreys";
    case VarianceVariant::invgam: return "invgam";
    case VarianceVariant::halfcauchy: return "hc";
  }
  return "jeffreys";
}

void check_weight_choice(const WeightChoice& w) {
  if (w.variant == WeightVariant::dirichlet) return;
  if (!(w.m > 0 && w.m < 1)) throw Error(ErrorCode::invalid_prior, "weight median must lie in (0, 1)");
  if (w.variant == WeightVariant::pcM && !(w.c >= 0.5 && w.c < 1)) {
    throw Error(ErrorCode::invalid_prior, "pcM concentration must lie in [0.5, 1)");
  }
}

void check_variance_choice(const VarianceChoice& v) {
  switch (v.variant) {
    case VarianceVariant::pc0:
      if (!(v.p1 > 0)) throw Error(ErrorCode::invalid_prior, "pc0 upper value U must be positive");
      if (!(v.p2 > 0 && v.p2 < 1)) throw Error(ErrorCode::invalid_prior, "pc0 tail probability must lie in (0, 1)");
      break;
    case VarianceVariant::invgam:
      if (!(v.p1 > 0 && v.p2 > 0)) throw Error(ErrorCode::invalid_prior, "invgam shape and scale must be positive");
      break;
    case VarianceVariant::halfcauchy:
      if (!(v.p1 > 0)) throw Error(ErrorCode::invalid_prior, "half-Cauchy scale must be positive");
      break;
    case VarianceVariant::jeffreys:
      break;
  }
}

double variance_logdensity(double V, const VarianceChoice& v) {
  if (!(V > 0)) return -kInf;
  switch (v.variant) {
    case VarianceVariant::pc0: {
      const double s = std::sqrt(V);
      return pc_stdev_logdensity(s, v.p1, v.p2) - std::log(2 * s);
    }
    case VarianceVariant::jeffreys:
      return -std::log(V);
    case VarianceVariant::invgam:
      return v.p1 * std::log(v.p2) - std::lgamma(v.p1) - (v.p1 + 1) * std::log(V) - v.p2 / V;
    case VarianceVariant::halfcauchy:
      return -std::log(M_PI) - std::log(v.p1) - std::log1p(V / (v.p1 * v.p1)) - 0.5 * std::log(V);
  }
  return -kInf;
}

bool variance_proper(const VarianceChoice& v) { return v.variant != VarianceVariant::jeffreys; }

double sample_variance(const VarianceChoice& v, std::mt19937_64& rng) {
  switch (v.variant) {
    case VarianceVariant::pc0: {
      std::exponential_distribution<double> e(pc_rate(v.p1, v.p2));
      const double s = e(rng);
      return s * s;
    }
    case VarianceVariant::invgam: {
      std::gamma_distribution<double> g(v.p1, 1.0);
      return v.p2 / g(rng);
    }
    case VarianceVariant::halfcauchy: {
      std::uniform_real_distribution<double> u(0.0, 1.0);
      const double s = v.p1 * std::tan(0.5 * M_PI * u(rng));
      return s * s;
    }
    case VarianceVariant::jeffreys:
      break;
  }
  throw Error(ErrorCode::improper_prior, "cannot sample from the improper Jeffreys' prior");
}

SplitDistance::SplitDistance(const Eigen::MatrixXd& left, const Eigen::MatrixXd& right, double base) : base_(base) {
  if (left.rows() != right.rows() || left.rows() != left.cols() || right.rows() != right.cols()) {
    throw Error(ErrorCode::numerical, "split covariances must be square and of equal size");
  }
  const Eigen::MatrixXd S = left + right;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (S + S.transpose()));
  const double top = es.eigenvalues().maxCoeff();
  if (!(top > 0)) throw Error(ErrorCode::numerical, "split has zero covariance");
  std::vector<int> keep;
  for (int i = 0; i < es.eigenvalues().size(); ++i) {
    if (es.eigenvalues()(i) > kRankCut * top) keep.push_back(i);
  }
  Eigen::MatrixXd P(S.rows(), static_cast<Eigen::Index>(keep.size()));
  for (size_t j = 0; j < keep.size(); ++j) P.col(static_cast<Eigen::Index>(j)) = es.eigenvectors().col(keep[j]);
  const Eigen::MatrixXd Lp = P.transpose() * left * P;
  const Eigen::MatrixXd Rp = P.transpose() * right * P;
  Eigen::MatrixXd S0 = base * Lp + (1 - base) * Rp;
  S0 = 0.5 * (S0 + S0.transpose());

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> e0(S0, Eigen::EigenvaluesOnly);
  const double top0 = e0.eigenvalues().maxCoeff();
  if (!(top0 > 0) || e0.eigenvalues().minCoeff() < kRankCut * top0) {
    // Base model lives on a lower-dimensional subspace: use the limiting
    // distance sqrt(|w - b|) on [0, 1].
    singular_ = true;
    dmax_lo_ = base_ > 0 ? 1.0 : 0.0;
    dmax_hi_ = base_ < 1 ? 1.0 : 0.0;
    return;
  }
  Eigen::LLT<Eigen::MatrixXd> llt(S0);
  const Eigen::MatrixXd Linv = llt.matrixL().solve(Eigen::MatrixXd::Identity(S0.rows(), S0.cols()));
  Eigen::MatrixXd D = Linv * (Lp - Rp) * Linv.transpose();
  D = 0.5 * (D + D.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ed(D, Eigen::EigenvaluesOnly);
  delta_ = ed.eigenvalues();

  auto endpoint = [&](double e) {
    if (e == base_) return 0.0;
    const Eigen::ArrayXd mu = 1.0 + (e - base_) * delta_.array();
    if (mu.minCoeff() < kRankCut * mu.maxCoeff()) return kInf;
    return distance(e);
  };
  dmax_lo_ = endpoint(0.0);
  dmax_hi_ = endpoint(1.0);
}

double SplitDistance::kld(double w) const {
  const double x = w - base_;
  if (singular_) return 0.5 * std::abs(x);
  double s = 0;
  for (int i = 0; i < delta_.size(); ++i) {
    const double y = x * delta_(i);
    if (1 + y <= 0) return kInf;
    if (std::abs(y) < 1e-4) {
      s += y * y * (0.5 - y * (1.0 / 3 - y * (0.25 - y * 0.2)));
    } else {
      s += y - std::log1p(y);
    }
  }
  return 0.5 * s;
}

double SplitDistance::distance(double w) const {
  if (singular_) return std::sqrt(std::abs(w - base_));
  return std::sqrt(2 * kld(w));
}

double SplitDistance::derivative(double w) const {
  const double x = w - base_;
  if (singular_) return 0.5 / std::sqrt(std::abs(x));
  const double d = distance(w);
  if (d == 0) return std::sqrt(0.5 * delta_.squaredNorm());
  double kp = 0;
  for (int i = 0; i < delta_.size(); ++i) kp += x * delta_(i) * delta_(i) / (1 + x * delta_(i));
  return std::abs(0.5 * kp / d);
}

double dense_kld(const Eigen::MatrixXd& S1, const Eigen::MatrixXd& S0) {
  Eigen::LLT<Eigen::MatrixXd> l0(S0), l1(S1);
  if (l0.info() != Eigen::Success || l1.info() != Eigen::Success) {
    throw Error(ErrorCode::numerical, "dense KLD needs positive definite matrices");
  }
  const double tr = l0.solve(S1).trace();
  const double ld0 = 2 * l0.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double ld1 = 2 * l1.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return 0.5 * (tr - static_cast<double>(S0.rows()) + ld0 - ld1);
}

DensityTable DensityTable::tabulate(const std::function<double(double)>& log_density_w, int knots, double range) {
  DensityTable t;
  t.eta_.resize(static_cast<size_t>(knots));
  t.lg_.resize(static_cast<size_t>(knots));
  const double K1 = knots - 1;
  for (int i = 0; i < knots; ++i) {
    const double eta = range * (2.0 * i - K1) / K1;
    t.eta_[static_cast<size_t>(i)] = eta;
    const double lg = log_density_w(expit(eta)) + log_expit(eta) + log_expit(-eta);
    if (!std::isfinite(lg)) {
      throw Error(ErrorCode::numerical, "density is not finite at logit(w) = " + std::to_string(eta));
    }
    t.lg_[static_cast<size_t>(i)] = lg;
  }
  const double top = *std::max_element(t.lg_.begin(), t.lg_.end());
  for (auto& v : t.lg_) v -= top;

  auto build = [&] {
    auto x = t.eta_;
    auto y = t.lg_;
    auto spline = std::make_shared<boost::math::interpolators::pchip<std::vector<double>>>(std::move(x), std::move(y));
    t.spline_ = std::make_shared<const std::function<double(double)>>([spline](double e) { return (*spline)(e); });
  };
  build();
  // Grid mass by Simpson on the interpolant; beyond the grid the log density
  // continues linearly, which gives exponential tails integrated in closed form.
  std::vector<double> cum(static_cast<size_t>(knots) + 1, 0.0);
  const size_t n = t.eta_.size();
  const double s_lo = (t.lg_[1] - t.lg_[0]) / (t.eta_[1] - t.eta_[0]);
  const double s_hi = (t.lg_[n - 1] - t.lg_[n - 2]) / (t.eta_[n - 1] - t.eta_[n - 2]);
  if (!(s_lo > 0) || !(s_hi < 0)) throw Error(ErrorCode::numerical, "density table tails do not decay");
  cum[0] = std::exp(t.lg_[0]) / s_lo;
  for (int i = 0; i + 1 < knots; ++i) {
    cum[static_cast<size_t>(i + 1)] = cum[static_cast<size_t>(i)] + t.partial(i, t.eta_[static_cast<size_t>(i + 1)]);
  }
  cum[n] = cum[n - 1] - std::exp(t.lg_[n - 1]) / s_hi;
  const double logz = std::log(cum.back());
  for (auto& v : t.lg_) v -= logz;
  build();
  for (auto& v : cum) v /= cum.back();
  cum.pop_back();
  t.cum_ = std::move(cum);
  return t;
}

double DensityTable::interp(double eta) const {
  const double lo = eta_.front();
  const double hi = eta_.back();
  if (eta < lo) {
    const double slope = (lg_[1] - lg_[0]) / (eta_[1] - eta_[0]);
    return lg_.front() + slope * (eta - lo);
  }
  if (eta > hi) {
    const size_t n = eta_.size();
    const double slope = (lg_[n - 1] - lg_[n - 2]) / (eta_[n - 1] - eta_[n - 2]);
    return lg_.back() + slope * (eta - hi);
  }
  return (*spline_)(eta);
}

double DensityTable::partial(int i, double eta) const {
  const double a = eta_[static_cast<size_t>(i)];
  const double h = eta - a;
  if (h <= 0) return 0;
  return h / 6 * (std::exp(interp(a)) + 4 * std::exp(interp(a + 0.5 * h)) + std::exp(interp(eta)));
}

double DensityTable::log_density_logit(double eta) const { return interp(eta); }

double DensityTable::log_density(double w) const {
  if (!(w > 0 && w < 1)) return -kInf;
  const double eta = logit(w);
  return interp(eta) - std::log(w) - std::log1p(-w);
}

double DensityTable::cdf(double w) const {
  if (w <= 0) return 0;
  if (w >= 1) return 1;
  const double eta = logit(w);
  const size_t n = eta_.size();
  if (eta <= eta_.front()) {
    const double s = (lg_[1] - lg_[0]) / (eta_[1] - eta_[0]);
    return std::exp(interp(eta)) / s;
  }
  if (eta >= eta_.back()) {
    const double s = (lg_[n - 1] - lg_[n - 2]) / (eta_[n - 1] - eta_[n - 2]);
    return 1 + std::exp(interp(eta)) / s;
  }
  const auto it = std::upper_bound(eta_.begin(), eta_.end(), eta);
  const int i = static_cast<int>(it - eta_.begin()) - 1;
  return std::min(1.0, cum_[static_cast<size_t>(i)] + partial(i, eta));
}

double DensityTable::quantile(double p) const {
  if (p <= 0) return 0;
  if (p >= 1) return 1;
  const size_t n = eta_.size();
  if (p < cum_.front()) {
    const double s = (lg_[1] - lg_[0]) / (eta_[1] - eta_[0]);
    return expit(eta_.front() + (std::log(p * s) - lg_.front()) / s);
  }
  if (p >= cum_.back()) {
    const double s = (lg_[n - 1] - lg_[n - 2]) / (eta_[n - 1] - eta_[n - 2]);
    return expit(eta_.back() + (std::log((1 - p) * -s) - lg_.back()) / s);
  }
  const auto it = std::upper_bound(cum_.begin(), cum_.end(), p);
  int i = static_cast<int>(it - cum_.begin()) - 1;
  i = std::clamp(i, 0, static_cast<int>(n) - 2);
  double lo = eta_[static_cast<size_t>(i)];
  double hi = eta_[static_cast<size_t>(i + 1)];
  const double target = p - cum_[static_cast<size_t>(i)];
  // Safeguarded Newton inside the cell.
  const double mass = cum_[static_cast<size_t>(i + 1)] - cum_[static_cast<size_t>(i)];
  double x = lo + (hi - lo) * std::clamp(target / mass, 0.0, 1.0);
  for (int it2 = 0; it2 < 60; ++it2) {
    const double f = partial(i, x) - target;
    if (std::abs(f) <= 1e-15 * mass || hi - lo < 1e-14) break;
    (f < 0 ? lo : hi) = x;
    const double xn = x - f / std::exp(interp(x));
    x = xn > lo && xn < hi ? xn : 0.5 * (lo + hi);
  }
  return expit(x);
}

namespace {

// Truncated exponential on [0, dmax] with rate lam.
double trexp_log(double d, double lam, double dmax) {
  if (d < 0 || d > dmax * (1 + 1e-12)) return -kInf;
  if (std::isinf(dmax)) return std::log(lam) - lam * d;
  if (lam < 1e-12 / dmax) return -std::log(dmax);
  return std::log(lam) - lam * d - std::log(-std::expm1(-lam * dmax));
}

double trexp_cdf(double d, double lam, double dmax) {
  if (d <= 0) return 0;
  if (d >= dmax) return 1;
  if (std::isinf(dmax)) return -std::expm1(-lam * d);
  if (lam < 1e-12 / dmax) return d / dmax;
  return std::expm1(-lam * d) / std::expm1(-lam * dmax);
}

constexpr double kLamLo = 1e-8;
constexpr double kLamHi = 1e8;

}  // namespace

std::shared_ptr<const WeightKernel> WeightKernel::dirichlet2() {
  auto k = std::make_shared<WeightKernel>();
  k->choice_ = WeightChoice{};
  const double a = dirichlet_concentration(2);
  k->lambda_ = a;
  const WeightKernel* raw = k.get();
  k->table_ = DensityTable::tabulate([raw](double w) { return raw->exact_log_density(w); });
  return k;
}

std::shared_ptr<const WeightKernel> WeightKernel::build(const WeightChoice& choice, const Eigen::MatrixXd& left,
                                                        const Eigen::MatrixXd& right) {
  check_weight_choice(choice);
  if (choice.variant == WeightVariant::dirichlet) return dirichlet2();
  auto k = std::make_shared<WeightKernel>();
  k->choice_ = choice;
  const double base = choice.variant == WeightVariant::pc0 ? 0.0 : (choice.variant == WeightVariant::pc1 ? 1.0 : choice.m);
  k->dist_ = std::make_shared<SplitDistance>(left, right, base);
  const SplitDistance& D = *k->dist_;
  const double m = choice.m;

  if (choice.variant == WeightVariant::pcM) {
    k->mass_lo_ = k->mass_hi_ = 0.5;
    const double lo = expit(logit(m) - std::log(3.0));
    const double hi = expit(logit(m) + std::log(3.0));
    const double dl = D.distance(lo), dh = D.distance(hi);
    const double ml = D.max_distance(false), mh = D.max_distance(true);
    k->lambda_ = bisect(
        [&](double lam) { return 0.5 * trexp_cdf(dl, lam, ml) + 0.5 * trexp_cdf(dh, lam, mh) - choice.c; }, kLamLo,
        kLamHi, 1e-10, true, "the pcM rate");
  } else {
    const bool upper = choice.variant == WeightVariant::pc0;
    (upper ? k->mass_hi_ : k->mass_lo_) = 1.0;
    const double dm = D.distance(m);
    const double dmax = D.max_distance(upper);
    if (D.singular_base()) {
      if (dm > 0.5 + 1e-12) {
        throw Error(ErrorCode::median_rule, "median " + std::to_string(m) +
                                                " is further than 0.25 from a base model with singular covariance");
      }
      if (trexp_cdf(dm, kLamLo, dmax) >= 0.5 - 1e-12) {
        k->lambda_ = 0;
      } else {
        k->lambda_ = bisect([&](double lam) { return trexp_cdf(dm, lam, dmax) - 0.5; }, kLamLo, kLamHi, 1e-10, true,
                            "the PC rate");
      }
    } else {
      k->lambda_ = bisect([&](double lam) { return trexp_cdf(dm, lam, dmax) - 0.5; }, kLamLo, kLamHi, 1e-10, true,
                          "the PC rate");
    }
  }
  const WeightKernel* raw = k.get();
  k->table_ = DensityTable::tabulate([raw](double w) { return raw->exact_log_density(w); });
  return k;
}

double WeightKernel::exact_log_density(double w) const {
  if (!(w > 0 && w < 1)) return -kInf;
  if (!dist_) {
    const double a = lambda_;
    return (a - 1) * (std::log(w) + std::log1p(-w)) - std::log(boost::math::beta(a, a));
  }
  const double b = dist_->base();
  const bool upper = w > b;
  const double mass = upper ? mass_hi_ : mass_lo_;
  if (mass <= 0) return -kInf;
  const double d = dist_->distance(w);
  const double deriv = dist_->derivative(w);
  return std::log(mass) + trexp_log(d, lambda_, dist_->max_distance(upper)) + std::log(deriv);
}

double dirichlet_interval_probability(double alpha, int p) {
  const double q = static_cast<double>(p - 1);
  const double lo = 1.0 / (1.0 + 3.0 * q);
  const double hi = 3.0 / (3.0 + q);
  return boost::math::ibeta(alpha, q * alpha, hi) - boost::math::ibeta(alpha, q * alpha, lo);
}

double dirichlet_concentration(int p) {
  if (p < 2) throw Error(ErrorCode::invalid_prior, "Dirichlet split needs at least two children");
  return bisect([p](double a) { return dirichlet_interval_probability(a, p) - 0.5; }, 1e-3, 1e3, 1e-13, true,
                "the Dirichlet concentration");
}

}  // namespace priorforest
