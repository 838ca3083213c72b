#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "priorforest/data.hpp"
#include "priorforest/prior.hpp"

namespace priorforest {

/// Linear predictor pieces shared by every likelihood evaluation: the latent
/// vector u = (beta - prior mean, z_1, ..., z_K) has prior N(0, D(logvar)) and
/// eta = base + Z u.
class LatentModel {
 public:
  LatentModel(std::shared_ptr<const ModelFrame> frame, const HDJointPrior& prior);

  const ModelFrame& frame() const { return *frame_; }
  int n() const { return frame_->n; }
  int q() const { return static_cast<int>(Z_.cols()); }
  int fixed_count() const { return static_cast<int>(frame_->X.cols()); }
  int component_count() const { return static_cast<int>(frame_->components.size()); }
  bool gaussian() const { return frame_->spec.likelihood == Likelihood::gaussian; }

  const Eigen::MatrixXd& Z() const { return Z_; }
  const Eigen::VectorXd& base() const { return base_; }
  // Column range of component k inside Z (after the fixed effects).
  int block_start(int k) const { return starts_[static_cast<size_t>(k)]; }
  int block_size(int k) const { return sizes_[static_cast<size_t>(k)]; }

  /// Prior variances of u, and the residual variance (0 when absent).
  Eigen::VectorXd prior_variance(const Eigen::VectorXd& logvar) const;
  double residual_variance(const Eigen::VectorXd& logvar) const;
  /// Prior covariance of eta - base: X S X^T + sum_k s2_k F_k F_k^T.
  Eigen::MatrixXd latent_cov(const Eigen::VectorXd& logvar) const;

  /// Maps u to fixed effects (prior mean added) and per-component level values.
  Eigen::VectorXd fixed_from(const Eigen::VectorXd& u) const;
  Eigen::VectorXd effect_from(const Eigen::VectorXd& u, int k) const;

 private:
  std::shared_ptr<const ModelFrame> frame_;
  Eigen::MatrixXd Z_;
  Eigen::VectorXd base_;
  Eigen::VectorXd mu_;
  Eigen::VectorXd fixed_var_;
  std::vector<int> starts_, sizes_;
  std::vector<int> var_index_;  // effect position of each component
  int eps_index_ = -1;
  std::vector<Eigen::MatrixXd> K_;  // F_k F_k^T
  Eigen::MatrixXd XSX_;
  // Cached for the gaussian path.
  Eigen::MatrixXd ZtZ_;
  Eigen::VectorXd Ztr_;
  double rtr_ = 0;
  friend double gaussian_marginal_loglik(const LatentModel&, const Eigen::VectorXd&);
};

/// Exact log p(y | logvar) for gaussian likelihood with the fixed and latent
/// effects integrated out.
double gaussian_marginal_loglik(const LatentModel& model, const Eigen::VectorXd& logvar);

/// Log-likelihood of the observations at linear predictor eta; `resid_var`
/// is used for gaussian only.
double obs_loglik(const ModelFrame& frame, const Eigen::VectorXd& eta, double resid_var);

struct LaplaceFit {
  double loglik = 0;
  Eigen::VectorXd f;  // mode of eta - base
  Eigen::VectorXd a;  // C^{-1} f
  Eigen::VectorXd W;
  Eigen::MatrixXd C;
  Eigen::LLT<Eigen::MatrixXd> llt;  // of I + W^1/2 C W^1/2
  int iterations = 0;
};

struct LaplaceOptions {
  double tol = 1e-8;
  int max_iter = 50;
};

/// Laplace approximation of log p(y | logvar). `start` warm-starts the mode
/// search (eta - base); pass an empty vector to start from zero.
LaplaceFit laplace_fit(const LatentModel& model, const Eigen::VectorXd& logvar, const Eigen::VectorXd& start = {},
                       const LaplaceOptions& opt = {});
double laplace_marginal_loglik(const LatentModel& model, const Eigen::VectorXd& logvar);

/// Latent draw u from the exact (gaussian) or Laplace conditional.
Eigen::VectorXd draw_latent_gaussian(const LatentModel& model, const Eigen::VectorXd& logvar, std::mt19937_64& rng);
Eigen::VectorXd draw_latent_laplace(const LatentModel& model, const Eigen::VectorXd& logvar, const LaplaceFit& fit,
                                    std::mt19937_64& rng);
/// Mean of u given logvar (gaussian likelihood).
Eigen::VectorXd latent_mean_gaussian(const LatentModel& model, const Eigen::VectorXd& logvar);

struct McmcSettings {
  int iter = 15000;
  int warmup = 5000;
  int chains = 1;
  uint64_t seed = 1;
  double step_scale = 1.0;
  int thin = 1;
  bool prior_only = false;
  bool latent = true;
  // Parallel chains when > 1.
  int threads = 1;
};

struct InferenceResult {
  McmcSettings settings;
  std::vector<std::string> effects;      // log-variance columns
  std::vector<std::string> tree_names;   // V[root] then w[child/split]
  std::vector<std::string> fixed_names;
  std::vector<std::string> latent_labels;
  Eigen::MatrixXd logvar;                // kept draws x effects
  Eigen::MatrixXd tree;                  // kept draws x tree_names
  Eigen::MatrixXd fixed;                 // kept draws x fixed effects
  std::vector<Eigen::MatrixXd> latent;   // per component: kept draws x levels
  std::vector<int> chain_of;             // chain id per kept draw
  std::vector<double> acceptance;        // per chain, after warmup
  bool jeffreys_pinned = false;
  std::vector<std::string> warnings;
  // Split-half Kolmogorov-Smirnov statistic per tree parameter.
  std::vector<double> split_half_ks;

  int draws() const { return static_cast<int>(logvar.rows()); }
  int tree_column(const std::string& name) const;
};

void check_settings(const McmcSettings& settings);

/// Adaptive random-walk Metropolis on log-variances. Prior-only runs with an
/// improper top-node prior move in tree coordinates with V pinned at 1.
InferenceResult run_mcmc(const HDJointPrior& prior, const McmcSettings& settings);

enum class Scale { tree, variance, stdev, precision };
Scale parse_scale(std::string_view s);
std::string_view to_string(Scale s);

struct SummaryRow {
  std::string param;
  double mean = 0, median = 0, sd = 0;
};

std::vector<SummaryRow> posterior_summaries(const InferenceResult& result, Scale scale);
std::string format_summary_table(const std::vector<SummaryRow>& rows);

/// Draws of one named quantity: tree names, sigma^2[label], fixed effects.
Eigen::VectorXd parameter_draws(const InferenceResult& result, const std::string& param, Scale scale);

/// kept draws x component levels.
Eigen::MatrixXd extract_posterior_effect(const InferenceResult& result, const std::string& label);

struct DensityGrid {
  std::string parameter;
  Scale scale = Scale::variance;
  std::vector<double> x;
  std::vector<double> density;
};

/// Prior density of V[root], w[child/split] or sigma^2[label] on a grid.
/// Closed form where available, kernel density of direct prior draws otherwise.
DensityGrid export_density_grid(const HDJointPrior& prior, const std::string& parameter, Scale scale,
                                const std::vector<double>& grid, int mc_draws = 100000, uint64_t seed = 1);
DensityGrid export_density_grid(const InferenceResult& result, const std::string& parameter, Scale scale,
                                const std::vector<double>& grid);

/// Reflected Gaussian kernel density estimate with Silverman bandwidth.
std::vector<double> kernel_density(const Eigen::VectorXd& draws, const std::vector<double>& grid,
                                   std::optional<double> lower = std::nullopt, std::optional<double> upper = std::nullopt);

/// Two-sample Kolmogorov-Smirnov statistic.
double ks_statistic(std::vector<double> a, std::vector<double> b);

}  // namespace priorforest
