#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace priorforest {

// Exponential prior on a standard deviation with Prob(sigma > U) = alpha.
double pc_rate(double U, double alpha);
double pc_stdev_logdensity(double sigma, double U, double alpha);
double pc_stdev_survival(double sigma, double U, double alpha);

enum class WeightVariant { pc0, pc1, pcM, dirichlet };
enum class VarianceVariant { pc0, jeffreys, invgam, halfcauchy };

struct WeightChoice {
  WeightVariant variant = WeightVariant::dirichlet;
  double m = 0.5;
  double c = 0.5;
  bool operator==(const WeightChoice&) const = default;
};

struct VarianceChoice {
  VarianceVariant variant = VarianceVariant::jeffreys;
  // pc0: (U, alpha); invgam: (shape, scale); halfcauchy: (scale, unused).
  double p1 = 0;
  double p2 = 0;
  bool operator==(const VarianceChoice&) const = default;
};

std::string_view to_string(WeightVariant v);
std::string_view to_string(VarianceVariant v);

/// Throws invalid_prior when parameters are outside their domain.
void check_weight_choice(const WeightChoice& w);
void check_variance_choice(const VarianceChoice& v);

/// Log density of a variance V (not its square root). Jeffreys is -log V.
double variance_logdensity(double V, const VarianceChoice& v);
bool variance_proper(const VarianceChoice& v);
double sample_variance(const VarianceChoice& v, std::mt19937_64& rng);

/// Distance sqrt(2 KLD) between N(0, S(w)) and its base N(0, S(b)) with
/// S(w) = w L + (1 - w) R, restricted to the range of L + R.
class SplitDistance {
 public:
  SplitDistance(const Eigen::MatrixXd& left, const Eigen::MatrixXd& right, double base);

  double base() const { return base_; }
  bool singular_base() const { return singular_; }
  int rank() const { return static_cast<int>(delta_.size()); }
  const Eigen::VectorXd& delta() const { return delta_; }

  double kld(double w) const;
  double distance(double w) const;
  // |d d / d w|.
  double derivative(double w) const;
  // Distance at the endpoint on the side of w (0 or 1); infinite when that
  // endpoint model is singular relative to the base.
  double max_distance(bool upper) const { return upper ? dmax_hi_ : dmax_lo_; }

 private:
  double base_;
  bool singular_ = false;
  Eigen::VectorXd delta_;
  double dmax_lo_ = 0;
  double dmax_hi_ = 0;
};

/// Dense reference: 0.5 (tr(S0^-1 S1) - n + log det S0 - log det S1).
double dense_kld(const Eigen::MatrixXd& S1, const Eigen::MatrixXd& S0);

/// Log density on a logit grid with monotone cubic interpolation. Stored on
/// the logit scale, g(eta) = f(w) w (1 - w), normalized over the grid range.
class DensityTable {
 public:
  static constexpr int kDefaultKnots = 1000;
  static constexpr double kDefaultRange = 12.0;

  DensityTable() = default;
  static DensityTable tabulate(const std::function<double(double)>& log_density_w, int knots = kDefaultKnots,
                               double range = kDefaultRange);

  double log_density_logit(double eta) const;
  double log_density(double w) const;
  double density(double w) const { return std::exp(log_density(w)); }
  double cdf(double w) const;
  double quantile(double p) const;

  const std::vector<double>& grid() const { return eta_; }
  const std::vector<double>& log_values() const { return lg_; }
  bool empty() const { return eta_.empty(); }

 private:
  double interp(double eta) const;
  double partial(int i, double eta) const;

  std::vector<double> eta_;
  std::vector<double> lg_;
  std::vector<double> cum_;
  std::shared_ptr<const std::function<double(double)>> spline_;
};

/// Weight prior on the proportion w of the first child of a split.
class WeightKernel {
 public:
  /// PC choices need the two observation-level child covariances; dual
  /// Dirichlet needs none.
  static std::shared_ptr<const WeightKernel> build(const WeightChoice& choice, const Eigen::MatrixXd& left,
                                                   const Eigen::MatrixXd& right);
  static std::shared_ptr<const WeightKernel> dirichlet2();

  const WeightChoice& choice() const { return choice_; }
  const DensityTable& table() const { return table_; }
  double lambda() const { return lambda_; }
  bool singular_base() const { return dist_ && dist_->singular_base(); }
  const SplitDistance* distance() const { return dist_.get(); }

  // Interpolated log density of w.
  double log_density(double w) const { return table_.log_density(w); }
  // Direct evaluation from the distance parameterization.
  double exact_log_density(double w) const;
  double cdf(double w) const { return table_.cdf(w); }
  double quantile(double p) const { return table_.quantile(p); }

 private:
  WeightChoice choice_;
  std::shared_ptr<SplitDistance> dist_;
  double lambda_ = 0;
  // Probability mass below/above the base (pcM: 0.5 each).
  double mass_lo_ = 0;
  double mass_hi_ = 0;
  DensityTable table_;
};

/// Concentration of the symmetric Dirichlet(p) ignorance prior.
double dirichlet_concentration(int p);
/// P(logit(1/4) < logit(w) - logit(1/p) < logit(3/4)) for w ~ Beta(a, (p-1) a).
double dirichlet_interval_probability(double alpha, int p);

}  // namespace priorforest
