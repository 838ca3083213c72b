#include <cmath>
#include <random>

#include "helpers.hpp"
#include "oracles.hpp"

using namespace pft;

namespace {

// y ~ x + mc(a) with 5 groups of 4 and tight fixed-effect priors.
HDJointPrior small_gaussian(std::shared_ptr<const ModelFrame>* frame_out = nullptr) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> z;
  DataTable t;
  std::vector<double> a, x, y;
  for (int i = 0; i < 20; ++i) {
    a.push_back(i / 4 + 1);
    x.push_back(z(rng));
    y.push_back(0.5 + 0.8 * x.back() + 0.7 * (i / 4 - 2) + z(rng));
  }
  t.add("y", y);
  t.add("x", x);
  t.add("a", a);
  ModelInputs in;
  in.data = t;
  const ModelSpec s = parse_formula("y ~ x + mc(a)");
  auto f = std::make_shared<const ModelFrame>(build_frame(s, in));
  if (frame_out) *frame_out = f;
  return assemble(s, {"s1 = (a, eps)", {}, {}}, f, {0.3, 2}, {{"x", {-0.2, 3}}}, t.names);
}

double mvn_logpdf(const Eigen::VectorXd& y, const Eigen::VectorXd& mu, const Eigen::MatrixXd& S) {
  const Eigen::LLT<Eigen::MatrixXd> llt(S);
  const Eigen::VectorXd r = llt.matrixL().solve(y - mu);
  const double logdet = 2 * llt.matrixLLT().diagonal().array().log().sum();
  return -0.5 * (r.squaredNorm() + logdet + y.size() * std::log(2 * M_PI));
}

// Three groups of two binomial observations with 25 trials each.
HDJointPrior tiny_binomial() {
  DataTable t;
  t.add("y", {3, 5, 12, 9, 20, 22});
  t.add("n", {25, 25, 25, 25, 25, 25});
  t.add("g", {1, 1, 2, 2, 3, 3});
  ModelInputs in;
  in.data = t;
  in.trials_column = "n";
  const ModelSpec s = parse_formula("y ~ -1 + mc(g)", Likelihood::binomial);
  auto f = std::make_shared<const ModelFrame>(build_frame(s, in));
  return assemble(s, {"(g)", {}, {}}, f, {}, {}, t.names);
}

double binom_group(double z, const std::vector<int>& ys, double s2, bool with_prior = true) {
  double s = with_prior ? -0.5 * z * z / s2 - 0.5 * std::log(2 * M_PI * s2) : 0.0;
  for (int y : ys) {
    s += std::lgamma(26.0) - std::lgamma(y + 1.0) - std::lgamma(26.0 - y) + y * std::log(1 / (1 + std::exp(-z))) +
         (25.0 - y) * std::log(1 / (1 + std::exp(z)));
  }
  return s;
}

const std::vector<std::vector<int>> kGroups = {{3, 5}, {12, 9}, {20, 22}};

}  // namespace

TEST_SUITE("inference") {
  TEST_CASE("gaussian marginal equals the dense normal density") {
    std::shared_ptr<const ModelFrame> f;
    const HDJointPrior p = small_gaussian(&f);
    const LatentModel m(f, p);
    Eigen::VectorXd lv(2);
    lv(p.effect_position("a")) = std::log(0.6);
    lv(p.effect_position("eps")) = std::log(1.3);
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(20, 20);
    Eigen::VectorXd mu(20);
    for (int i = 0; i < 20; ++i) {
      mu(i) = 0.3 - 0.2 * f->X(i, 1);
      for (int j = 0; j < 20; ++j) {
        S(i, j) = 4 + 9 * f->X(i, 1) * f->X(j, 1) + (i / 4 == j / 4 ? 0.6 : 0.0) + (i == j ? 1.3 : 0.0);
      }
    }
    const double want = mvn_logpdf(f->y, mu, S);
    CHECK(gaussian_marginal_loglik(m, lv) == doctest::Approx(want).epsilon(1e-10));
    // The latent covariance plus residual is the same matrix.
    Eigen::MatrixXd C = m.latent_cov(lv);
    C.diagonal().array() += m.residual_variance(lv);
    CHECK((C - S).cwiseAbs().maxCoeff() < 1e-10);
  }

  TEST_CASE("Laplace is exact for gaussian observations") {
    std::shared_ptr<const ModelFrame> f;
    const HDJointPrior p = small_gaussian(&f);
    const LatentModel m(f, p);
    Eigen::VectorXd lv(2);
    lv << std::log(0.4), std::log(0.9);
    CHECK(laplace_marginal_loglik(m, lv) == doctest::Approx(gaussian_marginal_loglik(m, lv)).epsilon(1e-8));
  }

  TEST_CASE("conditional latent mean") {
    std::shared_ptr<const ModelFrame> f;
    const HDJointPrior p = small_gaussian(&f);
    const LatentModel m(f, p);
    Eigen::VectorXd lv(2);
    lv << std::log(0.5), std::log(1.1);
    const Eigen::VectorXd D = m.prior_variance(lv);
    const double s2 = m.residual_variance(lv);
    const Eigen::MatrixXd& Z = m.Z();
    Eigen::MatrixXd C = Z * D.asDiagonal() * Z.transpose();
    C.diagonal().array() += s2;
    const Eigen::VectorXd want = D.asDiagonal() * Z.transpose() * C.ldlt().solve(f->y - m.base());
    CHECK((latent_mean_gaussian(m, lv) - want).cwiseAbs().maxCoeff() < 1e-9);
  }

  TEST_CASE("binomial Laplace against per-group Newton and quadrature") {
    const HDJointPrior p = tiny_binomial();
    const LatentModel m(p.frame, p);
    for (double s2 : {0.3, 1.0, 4.0}) {
      Eigen::VectorXd lv(1);
      lv(0) = std::log(s2);
      double lap = 0, quad = 0;
      for (const auto& ys : kGroups) {
        double z = 0;
        for (int it = 0; it < 100; ++it) {
          const double pr = 1 / (1 + std::exp(-z));
          double g = -z / s2, h = -1 / s2;
          for (int y : ys) g += y - 25 * pr, h -= 25 * pr * (1 - pr);
          z -= g / h;
          if (std::abs(g) < 1e-13) break;
        }
        const double pr = 1 / (1 + std::exp(-z));
        const double h = 1 / s2 + 50 * pr * (1 - pr);
        lap += binom_group(z, ys, s2) + 0.5 * std::log(2 * M_PI / h);
        const double peak = binom_group(z, ys, s2);
        quad += peak + std::log(oracle::integrate([&](double u) { return std::exp(binom_group(u, ys, s2) - peak); },
                                                  z - 12, z + 12, 1e-12));
      }
      CHECK(laplace_marginal_loglik(m, lv) == doctest::Approx(lap).epsilon(1e-8));
      // Laplace error grows with the group variance; about 1.4e-3 at s2 = 4.
      CHECK(laplace_marginal_loglik(m, lv) == doctest::Approx(quad).epsilon(s2 <= 1 ? 1e-3 : 2e-3));
    }
  }

  TEST_CASE("poisson with all-zero counts stays finite") {
    DataTable t;
    t.add("y", {0, 0, 0, 0, 0, 0});
    t.add("g", {1, 1, 2, 2, 3, 3});
    ModelInputs in;
    in.data = t;
    const ModelSpec s = parse_formula("y ~ mc(g)", Likelihood::poisson);
    auto f = std::make_shared<const ModelFrame>(build_frame(s, in));
    const HDJointPrior p = assemble(s, {}, f, {0, 10}, {}, t.names);
    const LatentModel m(f, p);
    Eigen::VectorXd lv(1);
    lv(0) = std::log(2.0);
    CHECK(std::isfinite(laplace_marginal_loglik(m, lv)));
  }

  TEST_CASE("sampler is deterministic per seed") {
    const HDJointPrior p = assemble_bundle(example_bundle("model1"));
    McmcSettings s;
    s.iter = 600;
    s.warmup = 200;
    s.seed = 5;
    const InferenceResult a = run_mcmc(p, s);
    const InferenceResult b = run_mcmc(p, s);
    CHECK(a.draws() == 400);
    CHECK(a.logvar == b.logvar);
    CHECK(a.tree == b.tree);
    s.seed = 6;
    CHECK_FALSE(run_mcmc(p, s).logvar == a.logvar);
    s.thin = 4;
    CHECK(run_mcmc(p, s).draws() == 100);
  }

  TEST_CASE("summaries, effects and grids") {
    const HDJointPrior p = assemble_bundle(example_bundle("model1"));
    McmcSettings s;
    s.iter = 1500;
    s.warmup = 500;
    const InferenceResult r = run_mcmc(p, s);
    CHECK(r.tree_names == std::vector<std::string>{"V[eps_a_b]", "w[a/a_b]", "w[eps/eps_a_b]"});
    const auto rows = posterior_summaries(r, Scale::variance);
    bool saw_eps = false;
    for (const auto& row : rows) {
      CHECK(row.sd >= 0);
      if (row.param == "sigma^2[eps]") {
        saw_eps = true;
        CHECK(row.median > 0.5);
        CHECK(row.median < 4);
      }
    }
    CHECK(saw_eps);
    const auto sd_rows = posterior_summaries(r, Scale::stdev);
    CHECK(sd_rows.size() == rows.size());
    const Eigen::MatrixXd ea = extract_posterior_effect(r, "a");
    CHECK(ea.rows() == r.draws());
    CHECK(ea.cols() == 10);
    CHECK(code_of([&] { extract_posterior_effect(r, "zz"); }) == "unknown_name");
    std::vector<double> grid;
    for (int i = 0; i <= 200; ++i) grid.push_back(i / 200.0);
    const DensityGrid g = export_density_grid(r, "w[a/a_b]", Scale::tree, grid);
    double mass = 0;
    for (size_t i = 1; i < grid.size(); ++i) mass += 0.5 * (g.density[i] + g.density[i - 1]) / 200;
    CHECK(mass == doctest::Approx(1).epsilon(0.02));
  }

  TEST_CASE("settings are validated") {
    const HDJointPrior p = assemble_bundle(example_bundle("model1"));
    McmcSettings s;
    s.iter = 100;
    s.warmup = 100;
    CHECK(code_of([&] { run_mcmc(p, s); }) == "invalid_data");
    s.warmup = 10;
    s.thin = 0;
    CHECK(code_of([&] { check_settings(s); }) == "invalid_data");
  }

  TEST_CASE("KS statistic matches the oracle") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> z;
    std::vector<double> a(300), b(200);
    for (auto& v : a) v = z(rng);
    for (auto& v : b) v = 0.3 + z(rng);
    CHECK(ks_statistic(a, b) == doctest::Approx(oracle::ks(a, b)).epsilon(1e-12));
  }

  TEST_CASE("prior density grids") {
    const HDJointPrior p = random_intercept_prior("(a); (eps)");
    std::vector<double> grid{0.5, 1, 2, 3};
    const DensityGrid g = export_density_grid(p, "V[a]", Scale::stdev, grid);
    for (size_t i = 0; i < grid.size(); ++i) {
      CHECK(g.density[i] == doctest::Approx(std::exp(pc_stdev_logdensity(grid[i], 3, 0.05))).epsilon(1e-10));
    }
  }
  TEST_CASE("random-intercept posterior recovers the variance share") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> z;
    std::vector<double> a(100), y(100), eff(10);
    for (auto& e : eff) e = 0.5 * z(rng);
    for (int i = 0; i < 100; ++i) {
      a[i] = i % 10 + 1;
      y[i] = eff[i % 10] + z(rng);
    }
    DataTable t;
    t.add("y", y);
    t.add("a", a);
    ModelInputs in;
    in.data = t;
    const ModelSpec s = parse_formula("y ~ mc(a)");
    auto f = std::make_shared<const ModelFrame>(build_frame(s, in));
    const HDJointPrior p = assemble(s, {"s1 = (a, eps)", {{"s1", {WeightVariant::pc0, 0.25, 0.5}}}, {}}, f, {}, {}, t.names);
    McmcSettings st;
    st.iter = 6000;
    st.warmup = 2000;
    Eigen::VectorXd w = parameter_draws(run_mcmc(p, st), "w[a/a_eps]", Scale::tree);
    std::sort(w.data(), w.data() + w.size());
    const double med = w(w.size() / 2);
    CHECK(med > 0.1);
    CHECK(med < 0.5);
  }
}
