// One line per criterion: PASS/FAIL, name, measured values, wall time.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "priorforest/bundle.hpp"
#include "priorforest/elicitation.hpp"
#include "priorforest/error.hpp"
#include "priorforest/simulate.hpp"

using namespace priorforest;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

HDJointPrior random_intercept(const std::string& tree, std::map<std::string, WeightChoice> w = {}) {
  ExampleModel e = simulate_random_intercept();
  e.choices.tree = tree;
  e.choices.w = std::move(w);
  const ModelSpec spec = parse_formula(e.formula, e.likelihood);
  auto frame = std::make_shared<const ModelFrame>(build_frame(spec, e.inputs));
  return assemble(spec, e.choices, frame, {}, {}, e.inputs.data.names);
}

std::vector<double> column(const InferenceResult& r, const std::string& name) {
  const Eigen::VectorXd v = parameter_draws(r, name, Scale::tree);
  return {v.data(), v.data() + v.size()};
}

double mean_of(const Eigen::VectorXd& v) { return v.mean(); }

Outcome pc0_stdev() {
  const HDJointPrior p = random_intercept("(a); (eps)");
  std::vector<double> grid;
  for (int i = 0; i <= 100; ++i) grid.push_back(0.05 * i);
  const DensityGrid g = export_density_grid(p, "V[a]", Scale::stdev, grid);
  const double lam = -std::log(0.05) / 3;
  double err = 0;
  for (size_t i = 0; i < grid.size(); ++i) err = std::max(err, std::abs(g.density[i] - lam * std::exp(-lam * grid[i])));
  const double surv = pc_stdev_survival(3, 3, 0.05);
  return {err < 1e-8 && std::abs(surv - 0.05) < 1e-10,
          "max abs err " + fmt("%.2e", err) + ", P(sigma > 3) - 0.05 = " + fmt("%.1e", surv - 0.05)};
}

Outcome dirichlet() {
  bool ok = std::abs(dirichlet_concentration(2) - 1) < 1e-6;
  std::string d = "alpha(2) = " + fmt("%.9f", dirichlet_concentration(2));
  for (int p : {3, 4, 5}) {
    const double a = dirichlet_concentration(p);
    const double prob = oracle::beta_interval_probability(a, p);
    ok = ok && std::abs(prob - 0.5) < 1e-6;
    d += ", p=" + std::to_string(p) + ": alpha " + fmt("%.6f", a) + " prob " + fmt("%.9f", prob);
  }
  return {ok, d};
}

Outcome medians() {
  bool ok = true;
  std::string d;
  const std::vector<std::pair<std::string, WeightChoice>> cases = {
      {"PC0(0.25)", {WeightVariant::pc0, 0.25, 0.5}},
      {"PC1(0.75)", {WeightVariant::pc1, 0.75, 0.5}},
      {"PCM(0.25, 0.85)", {WeightVariant::pcM, 0.25, 0.85}}};
  for (const auto& [name, w] : cases) {
    const HDJointPrior p = random_intercept("s1 = (a, eps)", {{"s1", w}});
    const int s = p.splits[0];
    const double c = p.kernel(s).cdf(w.m);
    ok = ok && std::abs(c - 0.5) < 0.005;
    d += name + " cdf " + fmt("%.4f", c) + ", ";
    if (w.variant == WeightVariant::pcM) {
      const double lo = 1 / (1 + 3 * (1 - w.m) / w.m), hi = 1 / (1 + (1 - w.m) / (3 * w.m));
      const PriorSamples ps = sample_prior(p, 100000, 7);
      int in = 0;
      for (const auto& t : ps.theta) in += t.w[0][0] > lo && t.w[0][0] < hi;
      const double mass = in / 1e5;
      ok = ok && std::abs(mass - 0.85) < 0.01;
      d += "interval mass " + fmt("%.4f", mass);
    }
  }
  return {ok, d};
}

Outcome reversal() {
  const HDJointPrior ctx = random_intercept("s1 = (a, eps)");
  const Eigen::MatrixXd A = ctx.frame->obs_cov(0);
  const Eigen::MatrixXd B = Eigen::MatrixXd::Identity(A.rows(), A.cols());
  double worst = 0;
  for (const auto& [L, R, m] : {std::tuple{A, B, 0.8}, std::tuple{B, A, 0.7}}) {
    const auto k1 = WeightKernel::build({WeightVariant::pc1, m, 0.5}, L, R);
    const auto k0 = WeightKernel::build({WeightVariant::pc0, 1 - m, 0.5}, R, L);
    for (int i = 1; i < 1000; ++i) {
      const double w = i / 1000.0;
      worst = std::max(worst, std::abs(std::expm1(k1->log_density(w) - k0->log_density(1 - w))));
    }
  }
  return {worst < 1e-6, "max relative density difference " + fmt("%.2e", worst)};
}

Outcome kld_contexts() {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> z;
  std::uniform_int_distribution<int> size(2, 200);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0;
  for (int c = 0; c < 50; ++c) {
    const int n = size(rng);
    std::uniform_int_distribution<int> rank(1, n);
    const int rl = rank(rng);
    Eigen::MatrixXd F(n, rl), G(n, n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < rl; ++j) F(i, j) = z(rng);
      for (int j = 0; j < n; ++j) G(i, j) = z(rng);
    }
    const Eigen::MatrixXd L = F * F.transpose() / rl;
    Eigen::MatrixXd R = G * G.transpose() / n;
    R.diagonal().array() += 0.1;
    const double base = c % 5 == 0 ? 0.0 : u(rng);
    const SplitDistance d(L, R, base);
    const Eigen::MatrixXd S0 = base * L + (1 - base) * R;
    for (double w : {0.05, 0.3, 0.6, 0.95}) {
      const double want = oracle::kld(w * L + (1 - w) * R, S0);
      worst = std::max(worst, std::abs(d.kld(w) - want) / std::max(1.0, want));
    }
  }
  return {worst < 1e-8, "50 contexts, max relative error " + fmt("%.2e", worst)};
}

Outcome pc_param() {
  const PcParamResult r = find_pc_prior_param(0.1, 10, 0.9, 200000, 1);
  return {r.U >= 3.30 && r.U <= 3.40 && std::abs(r.coverage - 0.9) < 0.005,
          "U = " + fmt("%.4f", r.U) + ", coverage " + fmt("%.4f", r.coverage)};
}

Outcome goldens() {
  const std::string dir = std::string(PRIORFOREST_TEST_DIR) + "/golden/";
  const bool m1 = summary_text(assemble_bundle(example_bundle("model1"))) == read_text(dir + "model1_summary.txt");
  const bool wh = prior_block_text(assemble_bundle(example_bundle("wheat"))) == read_text(dir + "wheat_block.txt");
  const bool nn = prior_block_text(assemble_bundle(example_bundle("neonatal"))) == read_text(dir + "neonatal_block.txt");
  auto yn = [](bool b) { return b ? "identical" : "DIFFERS"; };
  return {m1 && wh && nn, std::string("model1 ") + yn(m1) + ", wheat " + yn(wh) + ", neonatal " + yn(nn)};
}

Outcome prior_only() {
  const HDJointPrior p = assemble_bundle(example_bundle("model1"));
  McmcSettings s;
  s.prior_only = true;
  s.thin = 20;
  s.warmup = 2000;
  s.iter = s.warmup + 5000 * s.thin;
  s.seed = 3;
  const InferenceResult r = run_mcmc(p, s);
  const PriorSamples ps = sample_prior(p, 5000, 4);
  const double crit = oracle::ks_critical_1pct(5000, 5000);
  bool ok = r.draws() == 5000;
  std::string d;
  for (size_t k = 0; k < p.splits.size(); ++k) {
    const int split = p.splits[k];
    const auto& F = p.forest;
    const std::string name = "w[" + F.node(F.node(split).children[0]).name + "/" + F.node(split).name + "]";
    std::vector<double> direct;
    for (const auto& t : ps.theta) direct.push_back(t.w[k][0]);
    const double D = oracle::ks(column(r, name), direct);
    ok = ok && D < crit;
    d += name + " KS " + fmt("%.4f", D) + ", ";
  }
  return {ok, d + "1% critical " + fmt("%.4f", crit)};
}

Outcome latin() {
  const HDJointPrior p = assemble_bundle(example_bundle("latin"));
  McmcSettings s;
  s.iter = 15000;
  s.warmup = 5000;
  s.thin = 10;
  s.seed = 1;
  const InferenceResult post = run_mcmc(p, s);
  s.prior_only = true;
  const InferenceResult prior = run_mcmc(p, s);
  const std::string top = "V[eps_row_col_iid_rw2]";
  Eigen::VectorXd v = parameter_draws(post, top, Scale::tree);
  std::vector<double> vs(v.data(), v.data() + v.size());
  std::nth_element(vs.begin(), vs.begin() + vs.size() / 2, vs.end());
  const double med = vs[vs.size() / 2];
  // Share of the top variance outside eps.
  auto share = [](std::vector<double> w) {
    for (auto& x : w) x = 1 - x;
    return w;
  };
  const std::string we = "w[eps/eps_row_col_iid_rw2]";
  const double pval = oracle::mann_whitney_greater(share(column(post, we)), share(column(prior, we)));
  return {med >= 0.02 && med <= 0.2 && pval < 0.01,
          "median V " + fmt("%.4f", med) + ", Mann-Whitney p " + fmt("%.2e", pval)};
}

Outcome neonatal() {
  const HDJointPrior p = assemble_bundle(example_bundle("neonatal"));
  McmcSettings s;
  s.iter = 15000;
  s.warmup = 5000;
  s.seed = 1;
  const InferenceResult r = run_mcmc(p, s);
  const double mu = mean_of(parameter_draws(r, "intercept", Scale::variance));
  const double beta = mean_of(parameter_draws(r, "urban", Scale::variance));
  const double V = mean_of(parameter_draws(r, "V[nu_v_u]", Scale::tree));
  return {mu >= -4.6 && mu <= -3.6 && beta >= 0 && beta <= 0.9 && V >= 0.2 && V <= 1.5,
          "intercept " + fmt("%.3f", mu) + ", urban " + fmt("%.3f", beta) + ", V " + fmt("%.3f", V)};
}

Outcome jeffreys() {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> z;
  std::vector<double> a(100), y(100), y3(100), eff(10);
  for (auto& e : eff) e = 0.5 * z(rng);
  for (int i = 0; i < 100; ++i) {
    a[i] = i % 10 + 1;
    y[i] = 1 + eff[i % 10] + z(rng);
    y3[i] = 3 * y[i];
  }
  auto fit = [&](const std::vector<double>& yy, uint64_t seed) {
    DataTable t;
    t.add("y", yy);
    t.add("a", a);
    ModelInputs in;
    in.data = t;
    const ModelSpec spec = parse_formula("y ~ mc(a)");
    auto frame = std::make_shared<const ModelFrame>(build_frame(spec, in));
    // Flat-ish intercept prior scaled with the data so only V carries the scale.
    const double sd = 1000 * (yy[0] / y[0]);
    const HDJointPrior p = assemble(spec, {"s1 = (a, eps)", {}, {}}, frame, {0, sd}, {}, t.names);
    McmcSettings s;
    s.thin = 20;
    s.warmup = 2000;
    s.iter = s.warmup + 5000 * s.thin;
    s.seed = seed;
    return run_mcmc(p, s);
  };
  const InferenceResult r1 = fit(y, 1), r3 = fit(y3, 2);
  std::vector<double> v1 = column(r1, "V[a_eps]"), v3 = column(r3, "V[a_eps]");
  for (auto& v : v3) v /= 9;
  const double crit = oracle::ks_critical_1pct(v1.size(), v3.size());
  const double kv = oracle::ks(v1, v3);
  const double kw = oracle::ks(column(r1, "w[a/a_eps]"), column(r3, "w[a/a_eps]"));
  return {kv < crit && kw < crit, "KS V/9 " + fmt("%.4f", kv) + ", KS w " + fmt("%.4f", kw) + ", 1% critical " +
                                      fmt("%.4f", crit)};
}

}  // namespace

int main() {
  struct Criterion {
    std::string name;
    double limit;  // seconds, <= 0 for none
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> all = {
      {"pc0-stdev-density", 1, pc0_stdev},
      {"dirichlet-concentration", 1, dirichlet},
      {"weight-prior-medians", 30, medians},
      {"reversal-equivalence", 0, reversal},
      {"kld-dense-oracle", 0, kld_contexts},
      {"find-pc-prior-param", 30, pc_param},
      {"summary-goldens", 0, goldens},
      {"prior-only-mcmc", 0, prior_only},
      {"latin-square", 300, latin},
      {"neonatal-binomial", 600, neonatal},
      {"jeffreys-invariance", 0, jeffreys},
  };
  int failed = 0;
  for (const auto& c : all) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.limit > 0 && secs > c.limit) {
      o.pass = false;
      o.detail += ", over the " + fmt("%.0f", c.limit) + " s limit";
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << c.name << ": " << o.detail << " (" << fmt("%.2f", secs) << " s)"
              << std::endl;
  }
  std::cout << (all.size() - failed) << "/" << all.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
