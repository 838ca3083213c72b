#include <cmath>

#include "helpers.hpp"
#include "oracles.hpp"

using namespace pft;

namespace {

Eigen::MatrixXd group_cov(int groups, int reps) {
  Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(groups * reps, groups);
  for (int i = 0; i < groups * reps; ++i) Z(i, i % groups) = 1;
  return Z * Z.transpose();
}

}  // namespace

TEST_SUITE("kernels") {
  TEST_CASE("PC0 stdev density") {
    const double lam = -std::log(0.05) / 3;
    CHECK(pc_rate(3, 0.05) == doctest::Approx(lam));
    CHECK(pc_stdev_logdensity(0, 3, 0.05) == doctest::Approx(std::log(lam)));
    CHECK(lam == doctest::Approx(0.99858).epsilon(1e-5));
    CHECK(pc_stdev_survival(3, 3, 0.05) == doctest::Approx(0.05).epsilon(1e-12));
  }

  TEST_CASE("variance densities") {
    CHECK(variance_logdensity(1.0, {VarianceVariant::invgam, 1, 1}) == doctest::Approx(-1));
    CHECK(variance_logdensity(2.0, {VarianceVariant::jeffreys, 0, 0}) == doctest::Approx(-std::log(2.0)));
    CHECK_FALSE(variance_proper({VarianceVariant::jeffreys, 0, 0}));
    // PC0 on the variance is the stdev density times |d sigma / dV|.
    const double V = 2.3;
    CHECK(variance_logdensity(V, {VarianceVariant::pc0, 3, 0.05}) ==
          doctest::Approx(pc_stdev_logdensity(std::sqrt(V), 3, 0.05) - std::log(2 * std::sqrt(V))));
    const double hc = variance_logdensity(V, {VarianceVariant::halfcauchy, 1.5, 0});
    const double s = std::sqrt(V);
    CHECK(hc == doctest::Approx(std::log(2 / (M_PI * 1.5 * (1 + s * s / 2.25))) - std::log(2 * s)));
    CHECK(code_of([] { check_variance_choice({VarianceVariant::pc0, 3, 1.5}); }) == "invalid_prior");
    CHECK(code_of([] { check_weight_choice({WeightVariant::pc0, 1.2, 0.5}); }) == "invalid_prior");
  }

  TEST_CASE("variance draws follow the closed form") {
    std::mt19937_64 rng(5);
    const VarianceChoice pc{VarianceVariant::pc0, 3, 0.05};
    int above = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) above += std::sqrt(sample_variance(pc, rng)) > 3;
    CHECK(static_cast<double>(above) / n == doctest::Approx(0.05).epsilon(0.05));
  }

  TEST_CASE("split distance identities") {
    const Eigen::MatrixXd L = group_cov(10, 10);
    const Eigen::MatrixXd R = Eigen::MatrixXd::Identity(100, 100);
    const SplitDistance d(L, R, 0.0);
    CHECK(d.distance(0.0) == doctest::Approx(0).epsilon(1e-12));
    const SplitDistance same(R, R, 0.3);
    CHECK(same.distance(0.8) == doctest::Approx(0).epsilon(1e-12));
  }

  TEST_CASE("split distance against the dense formula on the random-intercept context") {
    const Eigen::MatrixXd L = group_cov(10, 10);
    const Eigen::MatrixXd R = Eigen::MatrixXd::Identity(100, 100);
    const SplitDistance d(L, R, 0.0);
    const double want = oracle::kld(0.5 * L + 0.5 * R, R);
    CHECK(d.kld(0.5) == doctest::Approx(want).epsilon(1e-10));
    CHECK(d.distance(0.5) == doctest::Approx(std::sqrt(2 * want)).epsilon(1e-10));
    CHECK(dense_kld(0.5 * L + 0.5 * R, R) == doctest::Approx(want).epsilon(1e-10));
  }

  TEST_CASE("Dirichlet concentration") {
    CHECK(dirichlet_concentration(2) == doctest::Approx(1).epsilon(1e-9));
    for (int p : {3, 4, 5}) {
      const double a = dirichlet_concentration(p);
      CHECK(oracle::beta_interval_probability(a, p) == doctest::Approx(0.5).epsilon(1e-8));
      CHECK(a == doctest::Approx(oracle::dirichlet_alpha(p)).epsilon(1e-6));
    }
    CHECK(code_of([] { dirichlet_concentration(1); }) == "invalid_prior");
  }

  TEST_CASE("density table round trip") {
    const auto t = DensityTable::tabulate([](double w) { return std::log(6.0) + std::log(w) + std::log1p(-w); });
    for (double w : {0.1, 0.3, 0.5, 0.9}) {
      CHECK(t.cdf(w) == doctest::Approx(3 * w * w - 2 * w * w * w).epsilon(1e-6));
      CHECK(t.quantile(t.cdf(w)) == doctest::Approx(w).epsilon(1e-8));
      // Monotone cubic on 1000 knots is second order near the peak.
      CHECK(t.density(w) == doctest::Approx(6 * w * (1 - w)).epsilon(1e-4));
    }
  }

  TEST_CASE("PC weight kernels put the median where asked") {
    const Eigen::MatrixXd L = group_cov(10, 10);
    const Eigen::MatrixXd R = Eigen::MatrixXd::Identity(100, 100);
    const auto k0 = WeightKernel::build({WeightVariant::pc0, 0.25, 0.5}, L, R);
    CHECK(k0->cdf(0.25) == doctest::Approx(0.5).epsilon(0.005));
    const auto k1 = WeightKernel::build({WeightVariant::pc1, 0.75, 0.5}, L, R);
    CHECK(k1->cdf(0.75) == doctest::Approx(0.5).epsilon(0.005));
    const auto km = WeightKernel::build({WeightVariant::pcM, 0.25, 0.85}, L, R);
    CHECK(km->cdf(0.25) == doctest::Approx(0.5).epsilon(0.005));
    // Interior mode near the median.
    double best = 0, arg = 0;
    for (int i = 1; i < 1000; ++i) {
      const double w = i / 1000.0;
      if (km->log_density(w) > best || i == 1) best = km->log_density(w), arg = w;
    }
    CHECK(arg > 0.15);
    CHECK(arg < 0.35);
    // PC0 density decreases away from its base.
    CHECK(k0->log_density(0.2) > k0->log_density(0.6));
    // The interpolated table agrees with direct evaluation.
    for (double w : {0.01, 0.2, 0.5, 0.8, 0.99}) CHECK(k0->log_density(w) == doctest::Approx(k0->exact_log_density(w)).epsilon(1e-3));
  }

  TEST_CASE("reversal equivalence") {
    const Eigen::MatrixXd A = group_cov(10, 10);
    const Eigen::MatrixXd B = Eigen::MatrixXd::Identity(100, 100);
    const auto p1 = WeightKernel::build({WeightVariant::pc1, 0.7, 0.5}, B, A);
    const auto p0 = WeightKernel::build({WeightVariant::pc0, 0.3, 0.5}, A, B);
    for (int i = 1; i < 100; ++i) {
      const double w = i / 100.0;
      CHECK(std::exp(p1->log_density(w)) == doctest::Approx(std::exp(p0->log_density(1 - w))).epsilon(1e-6));
    }
    CHECK(flip({WeightVariant::pc0, 0.25, 0.5}) == WeightChoice{WeightVariant::pc1, 0.75, 0.5});
    CHECK(flip({WeightVariant::pcM, 0.7, 0.5}).m == doctest::Approx(0.3));
  }

  TEST_CASE("tiny context with a rank-one component") {
    const Eigen::MatrixXd L = Eigen::MatrixXd::Ones(4, 4);
    const Eigen::MatrixXd R = Eigen::MatrixXd::Identity(4, 4);
    const auto k = WeightKernel::build({WeightVariant::pc0, 0.25, 0.5}, L, R);
    CHECK(k->cdf(0.25) == doctest::Approx(0.5).epsilon(0.005));
  }
}
