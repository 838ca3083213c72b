#include "priorforest/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <mutex>
#include <thread>

#include <boost/math/special_functions/beta.hpp>

#include "priorforest/error.hpp"
#include "priorforest/numerics.hpp"

namespace priorforest {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
const double kLog2Pi = std::log(2 * M_PI);

// Cholesky with a jitter ladder 1e-10 .. 1e-6 relative to the mean diagonal.
Eigen::LLT<Eigen::MatrixXd> robust_llt(const Eigen::MatrixXd& A, const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(A);
  if (llt.info() == Eigen::Success) return llt;
  const double scale = std::max(A.diagonal().mean(), 1e-300);
  for (double j = 1e-10; j <= 1e-6 * 1.0001; j *= 10) {
    Eigen::MatrixXd B = A;
    B.diagonal().array() += j * scale;
    llt.compute(B);
    if (llt.info() == Eigen::Success) return llt;
  }
  throw Error(ErrorCode::numerical, std::string(what) + " is not positive definite");
}

double log_det(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  return 2 * llt.matrixLLT().diagonal().array().log().sum();
}

Eigen::VectorXd std_normal(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = nd(rng);
  return v;
}

double quantile_sorted(const std::vector<double>& s, double p) {
  if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double pos = p * static_cast<double>(s.size() - 1);
  const size_t i = static_cast<size_t>(std::floor(pos));
  const double f = pos - static_cast<double>(i);
  return i + 1 < s.size() ? s[i] * (1 - f) + s[i + 1] * f : s[i];
}

}  // namespace

LatentModel::LatentModel(std::shared_ptr<const ModelFrame> frame, const HDJointPrior& prior) : frame_(std::move(frame)) {
  if (!frame_) throw Error(ErrorCode::invalid_data, "inference needs model data");
  const auto& f = *frame_;
  const int p = static_cast<int>(f.X.cols());
  int q = p;
  for (const auto& F : f.obs_factor) {
    starts_.push_back(q);
    sizes_.push_back(static_cast<int>(F.cols()));
    q += static_cast<int>(F.cols());
  }
  Z_.resize(f.n, q);
  if (p) Z_.leftCols(p) = f.X;
  for (size_t k = 0; k < f.obs_factor.size(); ++k) Z_.middleCols(starts_[k], sizes_[k]) = f.obs_factor[k];

  mu_.resize(p);
  fixed_var_.resize(p);
  for (int j = 0; j < p; ++j) {
    const auto& name = f.fixed_names[static_cast<size_t>(j)];
    const GaussianPrior g = name == "intercept" ? prior.intercept : prior.covariate.at(name);
    mu_(j) = g.mean;
    fixed_var_(j) = g.sd * g.sd;
  }
  base_ = f.offset;
  if (p) base_ += f.X * mu_;
  for (const auto& c : f.components) var_index_.push_back(prior.effect_position(c.label));
  if (f.spec.has_residual()) eps_index_ = prior.effect_position(std::string(kResidualLabel));

  for (const auto& F : f.obs_factor) K_.push_back(F * F.transpose());
  XSX_ = f.X * fixed_var_.asDiagonal() * f.X.transpose();
  if (gaussian()) {
    const Eigen::VectorXd r = f.y - base_;
    ZtZ_ = Z_.transpose() * Z_;
    Ztr_ = Z_.transpose() * r;
    rtr_ = r.squaredNorm();
  }
}

Eigen::VectorXd LatentModel::prior_variance(const Eigen::VectorXd& logvar) const {
  Eigen::VectorXd d(q());
  const int p = fixed_count();
  d.head(p) = fixed_var_;
  for (int k = 0; k < component_count(); ++k) {
    d.segment(starts_[static_cast<size_t>(k)], sizes_[static_cast<size_t>(k)])
        .setConstant(std::exp(logvar(var_index_[static_cast<size_t>(k)])));
  }
  return d;
}

double LatentModel::residual_variance(const Eigen::VectorXd& logvar) const {
  return eps_index_ < 0 ? 0.0 : std::exp(logvar(eps_index_));
}

Eigen::MatrixXd LatentModel::latent_cov(const Eigen::VectorXd& logvar) const {
  Eigen::MatrixXd C = XSX_;
  for (int k = 0; k < component_count(); ++k) C += std::exp(logvar(var_index_[static_cast<size_t>(k)])) * K_[static_cast<size_t>(k)];
  return C;
}

Eigen::VectorXd LatentModel::fixed_from(const Eigen::VectorXd& u) const { return mu_ + u.head(fixed_count()); }

Eigen::VectorXd LatentModel::effect_from(const Eigen::VectorXd& u, int k) const {
  const auto& R = frame_->components[static_cast<size_t>(k)].cov_factor;
  return R * u.segment(starts_[static_cast<size_t>(k)], sizes_[static_cast<size_t>(k)]);
}

double gaussian_marginal_loglik(const LatentModel& m, const Eigen::VectorXd& logvar) {
  if (!m.gaussian()) throw Error(ErrorCode::invalid_data, "gaussian marginal needs gaussian likelihood");
  const int n = m.n();
  const double s2 = m.residual_variance(logvar);
  if (m.q() <= n) {
    const Eigen::VectorXd d = m.prior_variance(logvar);
    Eigen::MatrixXd M = m.ZtZ_ / s2;
    M.diagonal() += d.cwiseInverse();
    auto llt = robust_llt(M, "posterior precision");
    const Eigen::VectorXd b = m.Ztr_ / s2;
    const double quad = m.rtr_ / s2 - b.dot(llt.solve(b));
    const double ld = n * std::log(s2) + d.array().log().sum() + log_det(llt);
    return -0.5 * (n * kLog2Pi + ld + quad);
  }
  Eigen::MatrixXd C = m.latent_cov(logvar);
  C.diagonal().array() += s2;
  auto llt = robust_llt(C, "marginal covariance");
  const Eigen::VectorXd r = m.frame().y - m.base();
  return -0.5 * (n * kLog2Pi + log_det(llt) + r.dot(llt.solve(r)));
}

double obs_loglik(const ModelFrame& f, const Eigen::VectorXd& eta, double resid_var) {
  double s = 0;
  switch (f.spec.likelihood) {
    case Likelihood::gaussian:
      s = -0.5 * (f.n * (kLog2Pi + std::log(resid_var)) + (f.y - eta).squaredNorm() / resid_var);
      break;
    case Likelihood::binomial:
      for (int i = 0; i < f.n; ++i) {
        const double N = f.trials(i), y = f.y(i);
        s += std::lgamma(N + 1) - std::lgamma(y + 1) - std::lgamma(N - y + 1) + y * log_expit(eta(i)) +
             (N - y) * log_expit(-eta(i));
      }
      break;
    case Likelihood::poisson:
      for (int i = 0; i < f.n; ++i) s += f.y(i) * eta(i) - std::exp(eta(i)) - std::lgamma(f.y(i) + 1);
      break;
  }
  return s;
}

namespace {

// Gradient and negative Hessian diagonal of the log-likelihood in eta.
void lik_derivs(const ModelFrame& f, const Eigen::VectorXd& eta, double s2, Eigen::VectorXd& g, Eigen::VectorXd& W) {
  g.resize(f.n);
  W.resize(f.n);
  for (int i = 0; i < f.n; ++i) {
    switch (f.spec.likelihood) {
      case Likelihood::gaussian:
        g(i) = (f.y(i) - eta(i)) / s2;
        W(i) = 1 / s2;
        break;
      case Likelihood::binomial: {
        const double p = expit(eta(i));
        g(i) = f.y(i) - f.trials(i) * p;
        W(i) = f.trials(i) * p * (1 - p);
        break;
      }
      case Likelihood::poisson: {
        const double mu = std::exp(eta(i));
        g(i) = f.y(i) - mu;
        W(i) = mu;
        break;
      }
    }
  }
}

}  // namespace

LaplaceFit laplace_fit(const LatentModel& m, const Eigen::VectorXd& logvar, const Eigen::VectorXd& start,
                       const LaplaceOptions& opt) {
  const auto& fr = m.frame();
  const int n = m.n();
  const double s2 = m.residual_variance(logvar);
  LaplaceFit fit;
  fit.C = m.latent_cov(logvar);
  const Eigen::MatrixXd& C = fit.C;
  Eigen::VectorXd f = start.size() == n ? start : Eigen::VectorXd::Zero(n);
  Eigen::VectorXd a = Eigen::VectorXd::Zero(n);
  bool have_a = start.size() != n;
  double psi = have_a ? obs_loglik(fr, m.base() + f, s2) : -kInf;
  Eigen::VectorXd g, W;
  bool converged = false;
  for (int it = 0; it < opt.max_iter; ++it) {
    fit.iterations = it + 1;
    lik_derivs(fr, m.base() + f, s2, g, W);
    const Eigen::VectorXd sW = W.cwiseSqrt();
    Eigen::MatrixXd B = sW.asDiagonal() * C * sW.asDiagonal();
    B.diagonal().array() += 1.0;
    auto llt = robust_llt(B, "Laplace system");
    const Eigen::VectorXd b = W.cwiseProduct(f) + g;
    const Eigen::VectorXd a_new = b - sW.cwiseProduct(llt.solve(sW.cwiseProduct(C * b)));
    Eigen::VectorXd f_new = C * a_new;
    double psi_new = -0.5 * a_new.dot(f_new) + obs_loglik(fr, m.base() + f_new, s2);
    Eigen::VectorXd a_step = a_new;
    // Step halving when the objective drops.
    if (have_a && !(psi_new >= psi - 1e-12 * std::abs(psi))) {
      double t = 1.0;
      for (int h = 0; h < 30 && !(psi_new >= psi - 1e-12 * std::abs(psi)); ++h) {
        t *= 0.5;
        a_step = a + t * (a_new - a);
        f_new = C * a_step;
        psi_new = -0.5 * a_step.dot(f_new) + obs_loglik(fr, m.base() + f_new, s2);
      }
    }
    if (!std::isfinite(psi_new)) throw Error(ErrorCode::convergence, "Laplace mode search diverged");
    const double df = (f_new - f).lpNorm<Eigen::Infinity>();
    const double dpsi = std::abs(psi_new - psi);
    f = f_new;
    a = a_step;
    psi = psi_new;
    have_a = true;
    if (dpsi < opt.tol || df < opt.tol) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    throw Error(ErrorCode::convergence, "Laplace mode search did not converge in " + std::to_string(opt.max_iter) +
                                            " iterations");
  }
  lik_derivs(fr, m.base() + f, s2, g, W);
  const Eigen::VectorXd sW = W.cwiseSqrt();
  Eigen::MatrixXd B = sW.asDiagonal() * C * sW.asDiagonal();
  B.diagonal().array() += 1.0;
  fit.llt = robust_llt(B, "Laplace system");
  fit.f = f;
  fit.a = a;
  fit.W = W;
  fit.loglik = psi - 0.5 * log_det(fit.llt);
  return fit;
}

double laplace_marginal_loglik(const LatentModel& m, const Eigen::VectorXd& logvar) {
  return laplace_fit(m, logvar).loglik;
}

Eigen::VectorXd latent_mean_gaussian(const LatentModel& m, const Eigen::VectorXd& logvar) {
  const double s2 = m.residual_variance(logvar);
  const Eigen::VectorXd d = m.prior_variance(logvar);
  Eigen::MatrixXd M = m.Z().transpose() * m.Z() / s2;
  M.diagonal() += d.cwiseInverse();
  auto llt = robust_llt(M, "posterior precision");
  return llt.solve(m.Z().transpose() * (m.frame().y - m.base()) / s2);
}

Eigen::VectorXd draw_latent_gaussian(const LatentModel& m, const Eigen::VectorXd& logvar, std::mt19937_64& rng) {
  if (m.q() > m.n()) return draw_latent_laplace(m, logvar, laplace_fit(m, logvar), rng);
  const double s2 = m.residual_variance(logvar);
  const Eigen::VectorXd d = m.prior_variance(logvar);
  Eigen::MatrixXd M = m.Z().transpose() * m.Z() / s2;
  M.diagonal() += d.cwiseInverse();
  auto llt = robust_llt(M, "posterior precision");
  const Eigen::VectorXd mean = llt.solve(m.Z().transpose() * (m.frame().y - m.base()) / s2);
  const Eigen::VectorXd xi = std_normal(m.q(), rng);
  return mean + llt.matrixU().solve(xi);
}

Eigen::VectorXd draw_latent_laplace(const LatentModel& m, const Eigen::VectorXd& logvar, const LaplaceFit& fit,
                                    std::mt19937_64& rng) {
  // Matheron's rule against the Gaussian pseudo-likelihood at the mode.
  const Eigen::VectorXd d = m.prior_variance(logvar);
  const Eigen::VectorXd sW = fit.W.cwiseSqrt();
  const Eigen::VectorXd u_mode = d.cwiseProduct(m.Z().transpose() * fit.a);
  const Eigen::VectorXd u0 = d.cwiseSqrt().cwiseProduct(std_normal(m.q(), rng));
  const Eigen::VectorXd t = sW.cwiseProduct(m.Z() * u0) + std_normal(m.n(), rng);
  const Eigen::VectorXd v = sW.cwiseProduct(fit.llt.solve(t));
  return u_mode + u0 - d.cwiseProduct(m.Z().transpose() * v);
}

int InferenceResult::tree_column(const std::string& name) const {
  for (size_t i = 0; i < tree_names.size(); ++i) {
    if (tree_names[i] == name) return static_cast<int>(i);
  }
  return -1;
}

namespace {

std::vector<std::string> tree_param_names(const HDJointPrior& prior) {
  std::vector<std::string> out;
  for (int r : prior.forest.roots) out.push_back("V[" + prior.forest.node(r).name + "]");
  for (int s : prior.splits) {
    const auto& n = prior.forest.node(s);
    const size_t k = n.children.size() == 2 ? 1 : n.children.size();
    for (size_t i = 0; i < k; ++i) out.push_back("w[" + prior.forest.node(n.children[i]).name + "/" + n.name + "]");
  }
  return out;
}

Eigen::VectorXd tree_row(const HDJointPrior& prior, const TreeParameterization& t) {
  std::vector<double> v(t.V);
  for (size_t j = 0; j < prior.splits.size(); ++j) {
    const auto& w = t.w[j];
    const size_t k = w.size() == 2 ? 1 : w.size();
    for (size_t i = 0; i < k; ++i) v.push_back(w[i]);
  }
  return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// Unconstrained coordinates of the tree parameterization: log V of each free
// root, then additive log-ratios of each split against its last child.
struct TreeCoords {
  const HDJointPrior* prior;
  std::vector<bool> free_root;

  explicit TreeCoords(const HDJointPrior& p) : prior(&p) {
    for (int r : p.forest.roots) free_root.push_back(variance_proper(p.variance_choice.at(r)));
  }
  int dim() const {
    int d = 0;
    for (bool b : free_root) d += b;
    for (int s : prior->splits) d += static_cast<int>(prior->forest.node(s).children.size()) - 1;
    return d;
  }
  TreeParameterization to_theta(const Eigen::VectorXd& x, double* log_jac) const {
    TreeParameterization t;
    int pos = 0;
    double lj = 0;
    for (bool b : free_root) {
      if (b) {
        t.V.push_back(std::exp(x(pos)));
        lj += x(pos);
        ++pos;
      } else {
        t.V.push_back(1.0);
      }
    }
    for (int s : prior->splits) {
      const int p = static_cast<int>(prior->forest.node(s).children.size());
      // Stable softmax with the last coordinate fixed at 0.
      double mx = 0;
      for (int i = 0; i < p - 1; ++i) mx = std::max(mx, x(pos + i));
      double sum = std::exp(-mx);
      for (int i = 0; i < p - 1; ++i) sum += std::exp(x(pos + i) - mx);
      std::vector<double> w(static_cast<size_t>(p));
      const double lsum = mx + std::log(sum);
      for (int i = 0; i < p - 1; ++i) {
        w[static_cast<size_t>(i)] = std::exp(x(pos + i) - lsum);
        lj += x(pos + i) - lsum;
      }
      w[static_cast<size_t>(p - 1)] = std::exp(-lsum);
      lj += -lsum;
      pos += p - 1;
      t.w.push_back(std::move(w));
    }
    if (log_jac) *log_jac = lj;
    return t;
  }
  Eigen::VectorXd from_theta(const TreeParameterization& t) const {
    Eigen::VectorXd x(dim());
    int pos = 0;
    for (size_t i = 0; i < free_root.size(); ++i) {
      if (free_root[i]) x(pos++) = std::log(t.V[i]);
    }
    for (const auto& w : t.w) {
      for (size_t i = 0; i + 1 < w.size(); ++i) x(pos++) = std::log(w[i]) - std::log(w.back());
    }
    return x;
  }
};

struct ChainOutput {
  std::vector<Eigen::VectorXd> logvar, tree, fixed;
  std::vector<std::vector<Eigen::VectorXd>> latent;
  double acceptance = 0;
  int failures = 0;
  bool pinned = false;
};

double ks_sorted(const std::vector<double>& a, const std::vector<double>& b) {
  size_t i = 0, j = 0;
  double d = 0;
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return d;
}

ChainOutput run_chain(const HDJointPrior& prior, const LatentModel* model, const McmcSettings& st, int chain) {
  std::seed_seq seq{static_cast<uint32_t>(st.seed & 0xffffffffu), static_cast<uint32_t>(st.seed >> 32),
                    static_cast<uint32_t>(chain), 0x9e3779b9u};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  const TreeCoords tc(prior);
  const bool tree_mode = st.prior_only && prior.jeffreys_root();
  const int d = tree_mode ? tc.dim() : prior.dim();
  ChainOutput out;
  out.pinned = tree_mode;

  // Starting point: equal weights, V from the response scale.
  TreeParameterization t0;
  double v0 = 1.0;
  if (!st.prior_only && model && model->gaussian() && model->frame().has_response) {
    const auto& y = model->frame().y;
    const double var = (y.array() - y.mean()).square().sum() / std::max(1, model->n() - 1);
    if (var > 0) v0 = var;
  }
  for (size_t i = 0; i < prior.forest.roots.size(); ++i) t0.V.push_back(v0 / static_cast<double>(prior.forest.roots.size()));
  for (int s : prior.splits) {
    const size_t p = prior.forest.node(s).children.size();
    t0.w.emplace_back(p, 1.0 / static_cast<double>(p));
  }
  if (tree_mode) {
    for (size_t i = 0; i < t0.V.size(); ++i) t0.V[i] = 1.0;
  }

  LaplaceFit cur_fit, prop_fit;
  auto target = [&](const Eigen::VectorXd& x, LaplaceFit* fit, const LaplaceFit* warm) -> double {
    if (tree_mode) {
      double lj = 0;
      const auto t = tc.to_theta(x, &lj);
      double lp = prior.log_prior_tree_param(t);
      return lp + lj;
    }
    double lp = prior.log_prior_logvar(x);
    if (!std::isfinite(lp) || st.prior_only) return lp;
    if (model->gaussian()) return lp + gaussian_marginal_loglik(*model, x);
    try {
      *fit = laplace_fit(*model, x, warm && warm->f.size() ? warm->f : Eigen::VectorXd());
    } catch (const Error& e) {
      if (e.code() != ErrorCode::convergence && e.code() != ErrorCode::numerical) throw;
      ++out.failures;
      return -kInf;
    }
    return lp + fit->loglik;
  };

  Eigen::VectorXd x = tree_mode ? tc.from_theta(t0) : prior.to_log_variances(t0).first;
  double lt = target(x, &cur_fit, nullptr);
  if (!std::isfinite(lt)) throw Error(ErrorCode::numerical, "target density is not finite at the starting point");

  const double acc_target = d == 1 ? 0.44 : 0.234;
  const double base_scale = 2.38 * 2.38 / d * st.step_scale;
  Eigen::MatrixXd Sigma = Eigen::MatrixXd::Identity(d, d) * 0.25;
  double log_s = 0;
  Eigen::LLT<Eigen::MatrixXd> prop_llt((base_scale * Sigma).eval());
  // Running moments for the empirical covariance.
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
  Eigen::MatrixXd m2 = Eigen::MatrixXd::Zero(d, d);
  long count = 0;
  const int adapt_start = st.warmup / 4;

  auto refresh = [&]() {
    Eigen::MatrixXd P = std::exp(2 * log_s) * base_scale * Sigma;
    P.diagonal().array() += 1e-10;
    prop_llt.compute(P);
  };

  long accepted = 0, post = 0;
  for (int it = 0; it < st.iter; ++it) {
    const Eigen::VectorXd xp = x + prop_llt.matrixL() * std_normal(d, rng);
    const double lp = target(xp, &prop_fit, &cur_fit);
    const double log_alpha = std::isfinite(lp) ? lp - lt : -kInf;
    const bool accept = std::log(unif(rng)) < log_alpha;
    if (accept) {
      x = xp;
      lt = lp;
      std::swap(cur_fit, prop_fit);
    }
    if (it < st.warmup) {
      const double a = std::isfinite(log_alpha) ? std::min(1.0, std::exp(log_alpha)) : 0.0;
      log_s += std::pow(it + 1.0, -0.6) * (a - acc_target);
      log_s = std::clamp(log_s, -15.0, 15.0);
      if (it >= adapt_start) {
        ++count;
        const Eigen::VectorXd delta = x - mean;
        mean += delta / static_cast<double>(count);
        m2 += delta * (x - mean).transpose();
        if (count > 2 * d + 20 && count % 100 == 0) {
          Sigma = m2 / static_cast<double>(count - 1);
          Sigma.diagonal().array() += 1e-8;
        }
      }
      refresh();
      continue;
    }
    ++post;
    accepted += accept;
    if ((it - st.warmup) % std::max(1, st.thin) != 0) continue;

    TreeParameterization theta;
    Eigen::VectorXd lv;
    if (tree_mode) {
      theta = tc.to_theta(x, nullptr);
      lv = prior.to_log_variances(theta).first;
    } else {
      lv = x;
      theta = prior.from_log_variances(x);
    }
    out.logvar.push_back(lv);
    out.tree.push_back(tree_row(prior, theta));
    if (model && st.latent) {
      Eigen::VectorXd u;
      if (st.prior_only) {
        u = model->prior_variance(lv).cwiseSqrt().cwiseProduct(std_normal(model->q(), rng));
      } else if (model->gaussian()) {
        u = draw_latent_gaussian(*model, lv, rng);
      } else {
        u = draw_latent_laplace(*model, lv, cur_fit, rng);
      }
      out.fixed.push_back(model->fixed_from(u));
      std::vector<Eigen::VectorXd> eff;
      for (int k = 0; k < model->component_count(); ++k) eff.push_back(model->effect_from(u, k));
      out.latent.push_back(std::move(eff));
    }
  }
  out.acceptance = post ? static_cast<double>(accepted) / static_cast<double>(post) : 0.0;
  return out;
}

}  // namespace

void check_settings(const McmcSettings& st) {
  if (st.iter <= st.warmup || st.warmup < 0) throw Error(ErrorCode::invalid_data, "iter must exceed warmup");
  if (st.chains < 1) throw Error(ErrorCode::invalid_data, "need at least one chain");
  if (st.thin < 1) throw Error(ErrorCode::invalid_data, "thin must be at least 1");
  if (!(st.step_scale > 0)) throw Error(ErrorCode::invalid_data, "step scale must be positive");
}

InferenceResult run_mcmc(const HDJointPrior& prior, const McmcSettings& st) {
  check_settings(st);
  std::unique_ptr<LatentModel> model;
  if (prior.frame) {
    model = std::make_unique<LatentModel>(prior.frame, prior);
  } else if (!st.prior_only) {
    throw Error(ErrorCode::invalid_data, "posterior inference needs model data");
  }
  if (!st.prior_only && !prior.frame->has_response) {
    throw Error(ErrorCode::invalid_data, "data has no response column \"" + prior.spec.response + "\"");
  }

  std::vector<ChainOutput> outs(static_cast<size_t>(st.chains));
  if (st.threads > 1 && st.chains > 1) {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errs(outs.size());
    size_t next = 0;
    std::mutex mu;
    const int nt = std::min(st.threads, st.chains);
    for (int t = 0; t < nt; ++t) {
      pool.emplace_back([&]() {
        for (;;) {
          size_t c;
          {
            std::lock_guard<std::mutex> lock(mu);
            if (next >= outs.size()) return;
            c = next++;
          }
          try {
            outs[c] = run_chain(prior, model.get(), st, static_cast<int>(c));
          } catch (...) {
            errs[c] = std::current_exception();
          }
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errs) {
      if (e) std::rethrow_exception(e);
    }
  } else {
    for (int c = 0; c < st.chains; ++c) outs[static_cast<size_t>(c)] = run_chain(prior, model.get(), st, c);
  }

  InferenceResult r;
  r.settings = st;
  r.effects = prior.effects;
  r.tree_names = tree_param_names(prior);
  if (model) {
    r.fixed_names = model->frame().fixed_names;
    for (const auto& c : model->frame().components) r.latent_labels.push_back(c.label);
  }
  size_t total = 0;
  for (const auto& o : outs) total += o.logvar.size();
  const auto N = static_cast<Eigen::Index>(total);
  r.logvar.resize(N, prior.dim());
  r.tree.resize(N, static_cast<Eigen::Index>(r.tree_names.size()));
  const bool with_latent = model && st.latent;
  if (with_latent) {
    r.fixed.resize(N, model->fixed_count());
    for (const auto& c : model->frame().components) r.latent.emplace_back(N, c.n);
  }
  Eigen::Index row = 0;
  int failures = 0;
  for (size_t c = 0; c < outs.size(); ++c) {
    auto& o = outs[c];
    r.acceptance.push_back(o.acceptance);
    r.jeffreys_pinned = r.jeffreys_pinned || o.pinned;
    failures += o.failures;
    for (size_t i = 0; i < o.logvar.size(); ++i, ++row) {
      r.logvar.row(row) = o.logvar[i].transpose();
      r.tree.row(row) = o.tree[i].transpose();
      r.chain_of.push_back(static_cast<int>(c));
      if (with_latent) {
        r.fixed.row(row) = o.fixed[i].transpose();
        for (size_t k = 0; k < r.latent.size(); ++k) r.latent[k].row(row) = o.latent[i][k].transpose();
      }
    }
  }
  if (failures) r.warnings.push_back(std::to_string(failures) + " proposals rejected after Laplace failures");
  if (r.jeffreys_pinned) {
    r.warnings.push_back("prior-only run with an improper total variance prior: V is pinned at 1 and only the weights are sampled");
  }

  // Split-half comparison per tree parameter.
  const Eigen::Index half = N / 2;
  for (Eigen::Index j = 0; j < r.tree.cols(); ++j) {
    std::vector<double> a(static_cast<size_t>(half)), b(static_cast<size_t>(N - half));
    for (Eigen::Index i = 0; i < half; ++i) a[static_cast<size_t>(i)] = r.tree(i, j);
    for (Eigen::Index i = half; i < N; ++i) b[static_cast<size_t>(i - half)] = r.tree(i, j);
    r.split_half_ks.push_back(half > 0 ? ks_statistic(a, b) : 0.0);
  }

  // Divergent total variance under an improper prior.
  if (!st.prior_only && N >= 30) {
    for (size_t i = 0; i < prior.forest.roots.size(); ++i) {
      if (variance_proper(prior.variance_choice.at(prior.forest.roots[i]))) continue;
      const Eigen::Index third = N / 3;
      Eigen::ArrayXd lv = r.tree.col(static_cast<Eigen::Index>(i)).array().log();
      const double m1 = lv.head(third).mean(), m3 = lv.tail(third).mean();
      auto var = [](const Eigen::ArrayXd& v) { return (v - v.mean()).square().sum() / std::max<Eigen::Index>(1, v.size() - 1); };
      const double sd = std::sqrt(0.5 * (var(lv.head(third)) + var(lv.tail(third))));
      if ((std::abs(m3 - m1) > 2 && std::abs(m3 - m1) > 5 * sd) || lv.maxCoeff() > 40) {
        r.warnings.push_back("the trace of " + r.tree_names[i] +
                             " drifts; the posterior may be improper with this prior and data");
      }
    }
  }
  for (size_t c = 0; c < r.acceptance.size(); ++c) {
    if (r.acceptance[c] < 0.1 || r.acceptance[c] > 0.5) {
      r.warnings.push_back("chain " + std::to_string(c + 1) + " acceptance rate " + format_number(r.acceptance[c]) +
                           " is outside [0.1, 0.5]");
    }
  }
  return r;
}

Scale parse_scale(std::string_view s) {
  if (s == "tree" || s == "tree-param" || s == "weight") return Scale::tree;
  if (s == "variance") return Scale::variance;
  if (s == "stdev" || s == "sd") return Scale::stdev;
  if (s == "precision") return Scale::precision;
  throw Error(ErrorCode::parse_error, "unknown scale \"" + std::string(s) + "\"");
}

std::string_view to_string(Scale s) {
  switch (s) {
    case Scale::tree: return "tree";
    case Scale::variance: return "variance";
    case Scale::stdev: return "stdev";
    case Scale::precision: return "precision";
  }
  return "";
}

namespace {

double transform(double v, Scale scale) {
  switch (scale) {
    case Scale::stdev: return std::sqrt(v);
    case Scale::precision: return 1 / v;
    default: return v;
  }
}

std::string effect_name(const std::string& label, Scale scale) {
  switch (scale) {
    case Scale::stdev: return "sigma[" + label + "]";
    case Scale::precision: return "tau[" + label + "]";
    default: return "sigma^2[" + label + "]";
  }
}

SummaryRow summarize(const std::string& name, const Eigen::VectorXd& v) {
  SummaryRow r;
  r.param = name;
  const auto n = v.size();
  if (n == 0) return r;
  r.mean = v.mean();
  r.sd = n > 1 ? std::sqrt((v.array() - r.mean).square().sum() / static_cast<double>(n - 1)) : 0.0;
  std::vector<double> s(v.data(), v.data() + n);
  std::sort(s.begin(), s.end());
  r.median = quantile_sorted(s, 0.5);
  return r;
}

// "sigma^2[a]", "sigma[a]", "tau[a]" -> a.
std::optional<std::pair<std::string, Scale>> effect_param(const std::string& p) {
  const std::pair<const char*, Scale> pre[] = {{"sigma^2[", Scale::variance}, {"sigma[", Scale::stdev}, {"tau[", Scale::precision}};
  for (const auto& [prefix, sc] : pre) {
    const std::string px(prefix);
    if (p.rfind(px, 0) == 0 && p.back() == ']') return std::make_pair(p.substr(px.size(), p.size() - px.size() - 1), sc);
  }
  return std::nullopt;
}

}  // namespace

std::vector<SummaryRow> posterior_summaries(const InferenceResult& r, Scale scale) {
  std::vector<SummaryRow> rows;
  if (scale == Scale::tree) {
    for (size_t j = 0; j < r.tree_names.size(); ++j) rows.push_back(summarize(r.tree_names[j], r.tree.col(static_cast<Eigen::Index>(j))));
  } else {
    for (size_t j = 0; j < r.effects.size(); ++j) {
      Eigen::VectorXd v = r.logvar.col(static_cast<Eigen::Index>(j)).array().exp();
      for (auto& x : v) x = transform(x, scale);
      rows.push_back(summarize(effect_name(r.effects[j], scale), v));
    }
  }
  for (size_t j = 0; j < r.fixed_names.size() && r.fixed.rows(); ++j) {
    rows.push_back(summarize(r.fixed_names[j], r.fixed.col(static_cast<Eigen::Index>(j))));
  }
  return rows;
}

std::string format_summary_table(const std::vector<SummaryRow>& rows) {
  size_t w = 6;
  for (const auto& r : rows) w = std::max(w, r.param.size());
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, " %-*s %7s %7s %6s\n", static_cast<int>(w), "Param.", "mean", "median", "sd");
  out += buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, " %-*s %7.3f %7.3f %6.3f\n", static_cast<int>(w), r.param.c_str(), r.mean, r.median, r.sd);
    out += buf;
  }
  return out;
}

Eigen::VectorXd parameter_draws(const InferenceResult& r, const std::string& param, Scale scale) {
  const int tc = r.tree_column(param);
  if (tc >= 0) {
    Eigen::VectorXd v = r.tree.col(tc);
    if (param.rfind("V[", 0) == 0 && scale != Scale::tree) {
      for (auto& x : v) x = transform(x, scale);
    }
    return v;
  }
  if (auto ep = effect_param(param)) {
    for (size_t j = 0; j < r.effects.size(); ++j) {
      if (r.effects[j] != ep->first) continue;
      const Scale sc = scale == Scale::tree || scale == Scale::variance ? ep->second : scale;
      Eigen::VectorXd v = r.logvar.col(static_cast<Eigen::Index>(j)).array().exp();
      for (auto& x : v) x = transform(x, sc);
      return v;
    }
    throw Error(ErrorCode::unknown_name, "unknown effect in \"" + param + "\"");
  }
  for (size_t j = 0; j < r.fixed_names.size(); ++j) {
    if (r.fixed_names[j] == param) {
      if (!r.fixed.rows()) throw Error(ErrorCode::not_found, "fixed-effect draws were not stored");
      return r.fixed.col(static_cast<Eigen::Index>(j));
    }
  }
  throw Error(ErrorCode::unknown_name, "unknown parameter \"" + param + "\"");
}

Eigen::MatrixXd extract_posterior_effect(const InferenceResult& r, const std::string& label) {
  for (size_t k = 0; k < r.latent_labels.size(); ++k) {
    if (r.latent_labels[k] == label) {
      if (k >= r.latent.size()) throw Error(ErrorCode::not_found, "latent draws were not stored");
      return r.latent[k];
    }
  }
  throw Error(ErrorCode::unknown_name, "unknown effect \"" + label + "\"");
}

double ks_statistic(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return ks_sorted(a, b);
}

std::vector<double> kernel_density(const Eigen::VectorXd& draws, const std::vector<double>& grid,
                                   std::optional<double> lower, std::optional<double> upper) {
  const auto n = draws.size();
  std::vector<double> out(grid.size(), 0.0);
  if (n < 2) return out;
  std::vector<double> s(draws.data(), draws.data() + n);
  std::sort(s.begin(), s.end());
  const double mean = draws.mean();
  const double sd = std::sqrt((draws.array() - mean).square().sum() / static_cast<double>(n - 1));
  const double iqr = quantile_sorted(s, 0.75) - quantile_sorted(s, 0.25);
  double spread = iqr > 0 ? std::min(sd, iqr / 1.34) : sd;
  if (!(spread > 0)) spread = std::max(std::abs(mean), 1.0) * 1e-3;
  const double h = 0.9 * spread * std::pow(static_cast<double>(n), -0.2);
  const double norm = 1.0 / (static_cast<double>(n) * h * std::sqrt(2 * M_PI));
  const double cut = 8 * h;
  // Kernel sum at x, optionally over the draws reflected through `mirror`.
  auto sum = [&](double x, std::optional<double> mirror) {
    const double c = mirror ? 2 * *mirror - x : x;
    double t = 0;
    auto lo = std::lower_bound(s.begin(), s.end(), c - cut);
    auto hi = std::upper_bound(s.begin(), s.end(), c + cut);
    for (auto it = lo; it != hi; ++it) {
      const double z = (c - *it) / h;
      t += std::exp(-0.5 * z * z);
    }
    return t;
  };
  for (size_t g = 0; g < grid.size(); ++g) {
    const double x = grid[g];
    if ((lower && x < *lower) || (upper && x > *upper)) continue;
    double t = sum(x, std::nullopt);
    if (lower) t += sum(x, lower);
    if (upper) t += sum(x, upper);
    out[g] = t * norm;
  }
  return out;
}

namespace {

double variance_density_on(const VarianceChoice& ch, double x, Scale scale) {
  if (!(x >= 0)) return 0.0;
  switch (scale) {
    case Scale::stdev:
      if (ch.variant == VarianceVariant::pc0) return std::exp(pc_stdev_logdensity(x, ch.p1, ch.p2));
      if (x == 0) return ch.variant == VarianceVariant::halfcauchy ? 2 / (M_PI * ch.p1) : 0.0;
      return 2 * x * std::exp(variance_logdensity(x * x, ch));
    case Scale::precision:
      if (x == 0) return 0.0;
      return std::exp(variance_logdensity(1 / x, ch)) / (x * x);
    default:
      if (x == 0) {
        if (ch.variant == VarianceVariant::invgam) return 0.0;
        return kInf;
      }
      return std::exp(variance_logdensity(x, ch));
  }
}

}  // namespace

DensityGrid export_density_grid(const HDJointPrior& prior, const std::string& parameter, Scale scale,
                                const std::vector<double>& grid, int mc_draws, uint64_t seed) {
  DensityGrid g;
  g.parameter = parameter;
  g.scale = scale;
  g.x = grid;
  g.density.assign(grid.size(), 0.0);
  const auto& F = prior.forest;

  auto refuse = [&](int root) {
    throw Error(ErrorCode::improper_prior, "the prior on V[" + F.node(root).name +
                                               "] is Jeffreys' and improper; its density is not plotted");
  };

  if (parameter.rfind("w[", 0) == 0 && parameter.back() == ']') {
    const std::string body = parameter.substr(2, parameter.size() - 3);
    const auto slash = body.rfind('/');
    if (slash == std::string::npos) throw Error(ErrorCode::unknown_name, "weight names look like w[child/split]");
    const int s = F.find(body.substr(slash + 1));
    const int c = F.find(body.substr(0, slash));
    if (s < 0 || c < 0 || F.node(c).parent != s) throw Error(ErrorCode::unknown_name, "unknown weight \"" + parameter + "\"");
    const auto& n = F.node(s);
    const auto& ch = prior.weight_choice.at(s);
    g.scale = Scale::tree;
    for (size_t i = 0; i < grid.size(); ++i) {
      const double x = grid[i];
      if (x < 0 || x > 1) continue;
      if (ch.variant != WeightVariant::dirichlet) {
        const double w = c == n.children[0] ? x : 1 - x;
        g.density[i] = std::exp(prior.kernel(s).log_density(w));
      } else {
        const double a = prior.dirichlet_alpha(s);
        const double b = a * static_cast<double>(n.children.size() - 1);
        if (x == 0 || x == 1) {
          const double e = x == 0 ? a : b;
          g.density[i] = e < 1 ? kInf : (e == 1 ? 1 / boost::math::beta(a, b) : 0.0);
        } else {
          g.density[i] = std::exp((a - 1) * std::log(x) + (b - 1) * std::log1p(-x) - std::log(boost::math::beta(a, b)));
        }
      }
    }
    return g;
  }

  int root = -1;
  std::string label;
  Scale sc = scale;
  if (parameter.rfind("V[", 0) == 0 && parameter.back() == ']') {
    root = F.find(parameter.substr(2, parameter.size() - 3));
    if (root < 0 || !F.node(root).is_root()) throw Error(ErrorCode::unknown_name, "unknown top node in \"" + parameter + "\"");
  } else if (auto ep = effect_param(parameter)) {
    label = ep->first;
    if (sc == Scale::tree) sc = ep->second;
    const int id = F.find(label);
    if (id < 0 || F.node(id).is_split()) throw Error(ErrorCode::unknown_name, "unknown effect in \"" + parameter + "\"");
    if (F.node(id).is_root()) root = id;
  } else {
    throw Error(ErrorCode::unknown_name, "unknown parameter \"" + parameter + "\"");
  }
  if (sc == Scale::tree) sc = Scale::variance;
  g.scale = sc;

  if (root >= 0) {
    const auto& ch = prior.variance_choice.at(root);
    if (!variance_proper(ch)) refuse(root);
    for (size_t i = 0; i < grid.size(); ++i) g.density[i] = variance_density_on(ch, grid[i], sc);
    return g;
  }
  const int top = F.root_of(F.find(label));
  if (!variance_proper(prior.variance_choice.at(top))) refuse(top);
  const auto samples = sample_prior(prior, mc_draws, seed);
  Eigen::VectorXd v = samples.logvar.col(prior.effect_position(label)).array().exp();
  for (auto& x : v) x = transform(x, sc);
  g.density = kernel_density(v, grid, 0.0);
  return g;
}

DensityGrid export_density_grid(const InferenceResult& r, const std::string& parameter, Scale scale,
                                const std::vector<double>& grid) {
  DensityGrid g;
  g.parameter = parameter;
  g.scale = scale;
  g.x = grid;
  const Eigen::VectorXd v = parameter_draws(r, parameter, scale);
  const bool weight = parameter.rfind("w[", 0) == 0;
  const bool positive = weight || parameter.rfind("V[", 0) == 0 || effect_param(parameter).has_value();
  if (weight) {
    g.scale = Scale::tree;
    g.density = kernel_density(v, grid, 0.0, 1.0);
  } else if (positive) {
    g.density = kernel_density(v, grid, 0.0);
  } else {
    g.density = kernel_density(v, grid);
  }
  return g;
}

}  // namespace priorforest
