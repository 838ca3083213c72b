#include "priorforest/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "priorforest/error.hpp"
#include "priorforest/latent.hpp"
#include "priorforest/numerics.hpp"

namespace priorforest {

namespace {

std::vector<double> draw_structured(const LatentComponent& c, double variance, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Eigen::VectorXd xi(c.cov_factor.cols());
  for (auto& v : xi) v = nd(rng);
  const Eigen::VectorXd x = std::sqrt(variance) * (c.cov_factor * xi);
  return {x.data(), x.data() + x.size()};
}

std::vector<double> iota1(int n) {
  std::vector<double> v(static_cast<size_t>(n));
  std::iota(v.begin(), v.end(), 1.0);
  return v;
}

}  // namespace

NeighborGraph lattice_area_graph() {
  // 7 x 7 cells, dropping (0,0) and (6,6).
  std::vector<int> id(49, -1);
  int n = 0;
  for (int r = 0; r < 7; ++r) {
    for (int c = 0; c < 7; ++c) {
      if ((r == 0 && c == 0) || (r == 6 && c == 6)) continue;
      id[static_cast<size_t>(r * 7 + c)] = n++;
    }
  }
  NeighborGraph g;
  g.n = n;
  g.adjacency.assign(static_cast<size_t>(n), {});
  for (int r = 0; r < 7; ++r) {
    for (int c = 0; c < 7; ++c) {
      const int a = id[static_cast<size_t>(r * 7 + c)];
      if (a < 0) continue;
      const int nb[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
      for (const auto& p : nb) {
        if (p[0] < 0 || p[0] > 6 || p[1] < 0 || p[1] > 6) continue;
        const int b = id[static_cast<size_t>(p[0] * 7 + p[1])];
        if (b >= 0) g.adjacency[static_cast<size_t>(a)].push_back(b);
      }
      std::sort(g.adjacency[static_cast<size_t>(a)].begin(), g.adjacency[static_cast<size_t>(a)].end());
    }
  }
  return g;
}

ExampleModel simulate_model1(uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const int p = 10, m = 10;
  std::vector<double> ea(p), eb(m);
  for (auto& v : ea) v = 0.5 * nd(rng);
  for (auto& v : eb) v = 0.3 * nd(rng);
  std::vector<double> a, b, x, y;
  for (int i = 0; i < p * m; ++i) {
    a.push_back(i / m + 1);
    b.push_back(i % m + 1);
    x.push_back(unif(rng));
  }
  for (int i = 0; i < p * m; ++i) {
    y.push_back(x[static_cast<size_t>(i)] + ea[static_cast<size_t>(a[static_cast<size_t>(i)] - 1)] +
                eb[static_cast<size_t>(b[static_cast<size_t>(i)] - 1)] + nd(rng));
  }
  ExampleModel e;
  e.name = "model1";
  e.formula = "y ~ x + mc(a) + mc(b)";
  e.inputs.data.add("y", y);
  e.inputs.data.add("x", x);
  e.inputs.data.add("a", a);
  e.inputs.data.add("b", b);
  e.choices.tree = "s1 = (a, b); s2 = (s1, eps)";
  e.choices.w["s1"] = {WeightVariant::pcM, 0.7, 0.5};
  e.choices.w["s2"] = {WeightVariant::pc0, 0.25, 0.5};
  e.choices.V["s2"] = {VarianceVariant::pc0, 3, 0.05};
  e.covariate_priors["x"] = {0, 100};
  e.truth = {{"x", 1.0}, {"sigma^2[a]", 0.25}, {"sigma^2[b]", 0.09}, {"sigma^2[eps]", 1.0}};
  return e;
}

ExampleModel simulate_latin(uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  const int k = 9;
  const double sd = 0.1, alpha = 1.0, beta = 0.05;
  auto centered = [&](double s) {
    std::vector<double> v(k);
    for (auto& x : v) x = s * nd(rng);
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / k;
    for (auto& x : v) x -= mean;
    return v;
  };
  const auto ra = centered(sd), cb = centered(sd), c2 = centered(sd);
  std::vector<double> row, col, trt, y;
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) {
      const int t = (i + j) % k;  // cyclic latin square
      const double c1 = 0.02 * ((t + 1 - 5) * (t + 1 - 5) - 20.0 / 3.0);
      row.push_back(i + 1);
      col.push_back(j + 1);
      trt.push_back(t + 1);
      y.push_back(alpha + beta * (t + 1) + ra[static_cast<size_t>(i)] + cb[static_cast<size_t>(j)] + c1 +
                  c2[static_cast<size_t>(t)] + sd * nd(rng));
    }
  }
  ExampleModel e;
  e.name = "latin";
  e.formula = "y ~ lin + mc(row) + mc(col) + mc(iid) + mc(rw2, model = \"rw2\", constr = TRUE, lin_constr = TRUE)";
  auto& d = e.inputs.data;
  d.add("y", y);
  d.add("lin", trt);
  d.add("row", row);
  d.add("col", col);
  d.add("iid", trt);
  d.add("rw2", trt);
  e.choices.tree = "s1 = (rw2, iid); s2 = (row, col, s1); s3 = (s2, eps)";
  e.choices.w["s1"] = {WeightVariant::pc0, 0.25, 0.5};
  e.choices.w["s2"] = {WeightVariant::dirichlet, 0.5, 0.5};
  e.choices.w["s3"] = {WeightVariant::pc0, 0.25, 0.5};
  e.truth = {{"intercept", alpha}, {"lin", beta}, {"sigma[row]", sd}, {"sigma[col]", sd}, {"sigma[iid]", sd}, {"sigma[eps]", sd}};
  return e;
}

ExampleModel simulate_neonatal(uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::bernoulli_distribution urban_draw(0.3);
  const NeighborGraph g = lattice_area_graph();
  const int areas = g.n;  // 47
  // 12 areas with 6 clusters, 10 with 8, the rest with 7: 327 clusters.
  std::vector<int> per(static_cast<size_t>(areas), 7);
  std::vector<int> order(static_cast<size_t>(areas));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (int i = 0; i < 12; ++i) per[static_cast<size_t>(order[static_cast<size_t>(i)])] = 6;
  for (int i = 12; i < 22; ++i) per[static_cast<size_t>(order[static_cast<size_t>(i)])] = 8;

  const double mu = -4, beta = 0.1, s2_nu = 0.2, s2_v = 0.1, s2_u = 0.5;
  StructureOptions bo;
  bo.constr = true;
  bo.scale_model = true;
  bo.graph = g;
  const LatentComponent besag = build_structure(LatentKind::besag, areas, bo, "u");
  const auto u = draw_structured(besag, s2_u, rng);
  std::vector<double> v(static_cast<size_t>(areas));
  for (auto& x : v) x = std::sqrt(s2_v) * nd(rng);
  const double vm = std::accumulate(v.begin(), v.end(), 0.0) / areas;
  for (auto& x : v) x -= vm;

  std::vector<double> y, trials, urban, nu_idx, area_idx;
  std::vector<double> nu;
  for (int a = 0; a < areas; ++a) {
    for (int j = 0; j < per[static_cast<size_t>(a)]; ++j) {
      area_idx.push_back(a + 1);
      urban.push_back(urban_draw(rng) ? 1.0 : 0.0);
      nu.push_back(std::sqrt(s2_nu) * nd(rng));
    }
  }
  const double num = std::accumulate(nu.begin(), nu.end(), 0.0) / static_cast<double>(nu.size());
  for (auto& x : nu) x -= num;
  for (size_t i = 0; i < nu.size(); ++i) {
    const int a = static_cast<int>(area_idx[i]) - 1;
    const double eta = mu + beta * urban[i] + u[static_cast<size_t>(a)] + v[static_cast<size_t>(a)] + nu[i];
    std::binomial_distribution<int> bd(25, expit(eta));
    y.push_back(bd(rng));
    trials.push_back(25);
    nu_idx.push_back(static_cast<double>(i + 1));
  }
  ExampleModel e;
  e.name = "neonatal";
  e.likelihood = Likelihood::binomial;
  e.formula = "y ~ urban + mc(nu) + mc(v) + mc(u, model = \"besag\", graph = graph_path, scale.model = TRUE)";
  auto& d = e.inputs.data;
  d.add("y", y);
  d.add("Ntrials", trials);
  d.add("urban", urban);
  d.add("nu", nu_idx);
  d.add("v", area_idx);
  d.add("u", area_idx);
  e.inputs.graphs["graph_path"] = g;
  e.inputs.trials_column = "Ntrials";
  e.choices.tree = "s1 = (u, v); s2 = (s1, nu)";
  e.choices.w["s1"] = {WeightVariant::pc0, 0.25, 0.5};
  e.choices.w["s2"] = {WeightVariant::pc1, 0.75, 0.5};
  e.choices.V["s2"] = {VarianceVariant::pc0, 3.35, 0.05};
  e.truth = {{"intercept", mu}, {"urban", beta}, {"sigma^2[nu]", s2_nu}, {"sigma^2[v]", s2_v}, {"sigma^2[u]", s2_u},
             {"V[nu_v_u]", s2_nu + s2_v + s2_u}};
  return e;
}

ExampleModel simulate_wheat(uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> freq(0.1, 0.9);
  const int n = 100, markers = 1000;
  Eigen::MatrixXd Z(n, markers), H(n, markers);
  double sa = 0, sd = 0;
  for (int j = 0; j < markers; ++j) {
    const double p = freq(rng);
    std::binomial_distribution<int> geno(2, p);
    for (int i = 0; i < n; ++i) {
      const int gi = geno(rng);
      Z(i, j) = gi - 2 * p;
      H(i, j) = (gi == 1 ? 1.0 : 0.0) - 2 * p * (1 - p);
    }
    sa += 2 * p * (1 - p);
    sd += std::pow(2 * p * (1 - p), 2);
  }
  Eigen::MatrixXd A = Z * Z.transpose() / sa;
  Eigen::MatrixXd D = H * H.transpose() / sd;
  Eigen::MatrixXd X = A.cwiseProduct(A);
  X /= X.trace() / n;
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
  // A small ridge keeps the relationship matrices invertible.
  auto precision = [&](const Eigen::MatrixXd& K) {
    Eigen::MatrixXd S = K + 0.01 * I;
    Eigen::MatrixXd Q = S.llt().solve(I);
    Q = 0.5 * (Q + Q.transpose());
    return scale_precision(Q);
  };
  ExampleModel e;
  e.name = "wheat";
  e.formula =
      "y ~ mc(a, model = \"generic0\", Cmatrix = Q_a, constr = TRUE) + mc(d, model = \"generic0\", Cmatrix = Q_d, "
      "constr = TRUE) + mc(x, model = \"generic0\", Cmatrix = Q_x, constr = TRUE)";
  e.inputs.matrices["Q_a"] = precision(A);
  e.inputs.matrices["Q_d"] = precision(D);
  e.inputs.matrices["Q_x"] = precision(X);

  const double h2 = 0.25;
  const double s2a = h2 * 0.85, s2d = h2 * 0.10, s2x = h2 * 0.05, s2e = 1 - h2;
  std::vector<double> y(static_cast<size_t>(n), 0.0);
  const std::pair<const char*, double> parts[] = {{"Q_a", s2a}, {"Q_d", s2d}, {"Q_x", s2x}};
  for (const auto& [name, s2] : parts) {
    StructureOptions o;
    o.constr = true;
    o.precision = e.inputs.matrices[name];
    const auto comp = build_structure(LatentKind::generic0, n, o, name);
    const auto g = draw_structured(comp, s2, rng);
    for (int i = 0; i < n; ++i) y[static_cast<size_t>(i)] += g[static_cast<size_t>(i)];
  }
  for (auto& v : y) v += std::sqrt(s2e) * nd(rng);
  auto& d = e.inputs.data;
  d.add("y", y);
  d.add("a", iota1(n));
  d.add("d", iota1(n));
  d.add("x", iota1(n));
  e.choices.tree = "s1 = (d, x); s2 = (a, s1); s3 = (s2, eps)";
  e.choices.w["s1"] = {WeightVariant::pcM, 0.67, 0.8};
  e.choices.w["s2"] = {WeightVariant::pcM, 0.85, 0.8};
  e.choices.w["s3"] = {WeightVariant::pc0, 0.25, 0.5};
  e.truth = {{"sigma^2[a]", s2a}, {"sigma^2[d]", s2d}, {"sigma^2[x]", s2x}, {"sigma^2[eps]", s2e}};
  return e;
}

ExampleModel simulate_random_intercept(uint64_t) {
  ExampleModel e;
  e.name = "random_intercept";
  e.formula = "y ~ -1 + mc(a)";
  std::vector<double> a;
  for (int r = 0; r < 10; ++r) {
    for (int i = 1; i <= 10; ++i) a.push_back(i);
  }
  e.inputs.data.add("y", std::vector<double>(a.size(), 0.0));
  e.inputs.data.add("a", a);
  e.choices.tree = "s1 = (a, eps)";
  e.choices.w["s1"] = {WeightVariant::pc0, 0.25, 0.5};
  return e;
}

const std::vector<std::string>& example_names() {
  static const std::vector<std::string> names = {"model1", "latin", "neonatal", "wheat", "random_intercept"};
  return names;
}

ExampleModel make_example(const std::string& name, uint64_t seed) {
  if (name == "model1") return simulate_model1(seed);
  if (name == "latin") return simulate_latin(seed);
  if (name == "neonatal") return simulate_neonatal(seed);
  if (name == "wheat") return simulate_wheat(seed);
  if (name == "random_intercept") return simulate_random_intercept(seed);
  throw Error(ErrorCode::unknown_name, "unknown example \"" + name + "\"");
}

}  // namespace priorforest
