#include "priorforest/latent.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "priorforest/error.hpp"

namespace priorforest {

int NeighborGraph::connected_components(std::vector<int>* membership) const {
  std::vector<int> comp(static_cast<size_t>(n), -1);
  int count = 0;
  for (int s = 0; s < n; ++s) {
    if (comp[static_cast<size_t>(s)] >= 0) continue;
    std::vector<int> stack{s};
    comp[static_cast<size_t>(s)] = count;
    while (!stack.empty()) {
      const int v = stack.back();
      stack.pop_back();
      for (int u : adjacency[static_cast<size_t>(v)]) {
        if (comp[static_cast<size_t>(u)] < 0) {
          comp[static_cast<size_t>(u)] = count;
          stack.push_back(u);
        }
      }
    }
    ++count;
  }
  if (membership) *membership = std::move(comp);
  return count;
}

NeighborGraph parse_graph(const std::string& text) {
  std::istringstream in(text);
  NeighborGraph g;
  if (!(in >> g.n) || g.n < 1) throw Error(ErrorCode::invalid_data, "graph: expected region count on first line");
  g.adjacency.assign(static_cast<size_t>(g.n), {});
  std::vector<bool> seen(static_cast<size_t>(g.n), false);
  long id, k;
  while (in >> id) {
    if (!(in >> k) || k < 0) throw Error(ErrorCode::invalid_data, "graph: expected neighbour count for region " + std::to_string(id));
    if (id < 1 || id > g.n) throw Error(ErrorCode::out_of_range, "graph: region id " + std::to_string(id) + " out of range");
    if (seen[static_cast<size_t>(id - 1)]) throw Error(ErrorCode::invalid_data, "graph: region " + std::to_string(id) + " listed twice");
    seen[static_cast<size_t>(id - 1)] = true;
    for (long j = 0; j < k; ++j) {
      long nb;
      if (!(in >> nb)) throw Error(ErrorCode::invalid_data, "graph: truncated neighbour list for region " + std::to_string(id));
      if (nb < 1 || nb > g.n) throw Error(ErrorCode::out_of_range, "graph: neighbour id " + std::to_string(nb) + " out of range");
      if (nb == id) throw Error(ErrorCode::invalid_data, "graph: region " + std::to_string(id) + " lists itself");
      g.adjacency[static_cast<size_t>(id - 1)].push_back(static_cast<int>(nb - 1));
    }
  }
  for (int i = 0; i < g.n; ++i) {
    std::set<int> s(g.adjacency[static_cast<size_t>(i)].begin(), g.adjacency[static_cast<size_t>(i)].end());
    g.adjacency[static_cast<size_t>(i)].assign(s.begin(), s.end());
  }
  for (int i = 0; i < g.n; ++i) {
    for (int j : g.adjacency[static_cast<size_t>(i)]) {
      const auto& back = g.adjacency[static_cast<size_t>(j)];
      if (std::find(back.begin(), back.end(), i) == back.end()) {
        throw Error(ErrorCode::asymmetric_graph, "graph: region " + std::to_string(i + 1) + " lists " +
                                                     std::to_string(j + 1) + " but not the reverse");
      }
    }
  }
  return g;
}

NeighborGraph read_graph_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_error, "cannot open graph file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_graph(ss.str());
}

std::string format_graph(const NeighborGraph& g) {
  std::ostringstream os;
  os << g.n << "\n";
  for (int i = 0; i < g.n; ++i) {
    const auto& nb = g.adjacency[static_cast<size_t>(i)];
    os << (i + 1) << " " << nb.size();
    for (int j : nb) os << " " << (j + 1);
    os << "\n";
  }
  return os.str();
}

Eigen::MatrixXd null_space_basis(const Eigen::MatrixXd& A, int n) {
  if (A.rows() == 0) return Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd At = A.transpose();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(At);
  if (qr.rank() < A.rows()) throw Error(ErrorCode::rank_deficient, "linear constraints are not linearly independent");
  const Eigen::MatrixXd Q = qr.householderQ();
  return Q.rightCols(n - A.rows());
}

void compute_covariance(LatentComponent& c) {
  const int n = c.n;
  const Eigen::MatrixXd V = null_space_basis(c.constraints, n);
  const Eigen::MatrixXd Qv = V.transpose() * c.precision * V;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (Qv + Qv.transpose()));
  const Eigen::VectorXd& lam = es.eigenvalues();
  const double top = lam.cwiseAbs().maxCoeff();
  const double cut = 1e-10 * top;
  if (top <= 0) throw Error(ErrorCode::numerical, "precision of " + c.label + " is zero");
  if (lam.minCoeff() < -cut) throw Error(ErrorCode::numerical, "precision of " + c.label + " is not positive semidefinite");
  std::vector<int> keep;
  for (int i = 0; i < lam.size(); ++i) {
    if (lam(i) > cut) keep.push_back(i);
  }
  Eigen::MatrixXd R(n, static_cast<Eigen::Index>(keep.size()));
  for (size_t j = 0; j < keep.size(); ++j) {
    R.col(static_cast<Eigen::Index>(j)) = V * es.eigenvectors().col(keep[j]) / std::sqrt(lam(keep[j]));
  }
  c.cov_factor = R;
  c.covariance = R * R.transpose();
}

LatentComponent build_structure(LatentKind kind, int n, const StructureOptions& options, const std::string& label) {
  LatentComponent c;
  c.label = label;
  c.kind = kind;
  c.n = n;
  const int min_n = kind == LatentKind::rw2 ? 3 : (kind == LatentKind::iid || kind == LatentKind::generic0 ? 1 : 2);
  if (n < min_n) throw Error(ErrorCode::invalid_data, "component " + label + " needs at least " + std::to_string(min_n) + " levels");

  std::vector<Eigen::VectorXd> rows;
  switch (kind) {
    case LatentKind::iid:
      c.precision = Eigen::MatrixXd::Identity(n, n);
      break;
    case LatentKind::rw1: {
      Eigen::MatrixXd D = Eigen::MatrixXd::Zero(n - 1, n);
      for (int i = 0; i < n - 1; ++i) {
        D(i, i) = -1;
        D(i, i + 1) = 1;
      }
      c.precision = D.transpose() * D;
      c.rank_deficiency = 1;
      break;
    }
    case LatentKind::rw2: {
      Eigen::MatrixXd D = Eigen::MatrixXd::Zero(n - 2, n);
      for (int i = 0; i < n - 2; ++i) {
        D(i, i) = 1;
        D(i, i + 1) = -2;
        D(i, i + 2) = 1;
      }
      c.precision = D.transpose() * D;
      c.rank_deficiency = 2;
      break;
    }
    case LatentKind::besag: {
      if (!options.graph) throw Error(ErrorCode::invalid_data, "besag component " + label + " requires a graph");
      const auto& g = *options.graph;
      if (g.n != n) {
        throw Error(ErrorCode::invalid_data, "graph for " + label + " has " + std::to_string(g.n) + " regions, expected " +
                                                 std::to_string(n));
      }
      c.precision = Eigen::MatrixXd::Zero(n, n);
      for (int i = 0; i < n; ++i) {
        for (int j : g.adjacency[static_cast<size_t>(i)]) c.precision(i, j) = -1;
        c.precision(i, i) = static_cast<double>(g.adjacency[static_cast<size_t>(i)].size());
      }
      std::vector<int> member;
      const int k = g.connected_components(&member);
      c.rank_deficiency = k;
      if (k > 1) {
        c.warnings.push_back("graph for " + label + " has " + std::to_string(k) +
                             " connected components; rank deficiency set to " + std::to_string(k));
      }
      if (options.constr) {
        for (int comp = 0; comp < k; ++comp) {
          Eigen::VectorXd r = Eigen::VectorXd::Zero(n);
          for (int i = 0; i < n; ++i) {
            if (member[static_cast<size_t>(i)] == comp) r(i) = 1;
          }
          rows.push_back(r);
        }
      }
      break;
    }
    case LatentKind::generic0: {
      if (!options.precision) throw Error(ErrorCode::invalid_data, "generic0 component " + label + " requires Cmatrix");
      const auto& Q = *options.precision;
      if (Q.rows() != n || Q.cols() != n) {
        throw Error(ErrorCode::invalid_data, "Cmatrix for " + label + " must be " + std::to_string(n) + "x" + std::to_string(n));
      }
      const double scale = std::max(1.0, Q.cwiseAbs().maxCoeff());
      if ((Q - Q.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
        throw Error(ErrorCode::not_symmetric, "Cmatrix for " + label + " is not symmetric");
      }
      c.precision = 0.5 * (Q + Q.transpose());
      break;
    }
  }
  if (options.constr && kind != LatentKind::besag) rows.push_back(Eigen::VectorXd::Ones(n));
  if (options.lin_constr) {
    if (kind != LatentKind::rw2) throw Error(ErrorCode::invalid_formula, "lin_constr is only available for rw2");
    if (!options.constr) rows.push_back(Eigen::VectorXd::Ones(n));
    rows.push_back(Eigen::VectorXd::LinSpaced(n, 1, n));
  }
  c.constraints.resize(static_cast<Eigen::Index>(rows.size()), n);
  for (size_t i = 0; i < rows.size(); ++i) c.constraints.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();

  compute_covariance(c);
  if (options.scale_model) c = scale_to_typical_variance(c);
  return c;
}

LatentComponent scale_to_typical_variance(const LatentComponent& c) {
  LatentComponent out = c;
  const Eigen::VectorXd d = c.covariance.diagonal();
  double log_sum = 0;
  for (int i = 0; i < d.size(); ++i) {
    if (!(d(i) > 0)) {
      throw Error(ErrorCode::numerical, "component " + c.label + " has a non-positive marginal variance at index " +
                                            std::to_string(i + 1));
    }
    log_sum += std::log(d(i));
  }
  const double typ = std::exp(log_sum / static_cast<double>(d.size()));
  out.precision *= typ;
  out.covariance /= typ;
  out.cov_factor /= std::sqrt(typ);
  out.typical_variance = c.typical_variance * typ;
  out.scaled = true;
  return out;
}

Eigen::MatrixXd scale_precision(const Eigen::MatrixXd& Q) {
  LatentComponent c;
  c.label = "matrix";
  c.n = static_cast<int>(Q.rows());
  c.precision = 0.5 * (Q + Q.transpose());
  c.constraints.resize(0, c.n);
  compute_covariance(c);
  return scale_to_typical_variance(c).precision;
}

Eigen::VectorXd apply_constraints(const Eigen::VectorXd& x, const Eigen::MatrixXd& A, const Eigen::MatrixXd* S) {
  if (A.rows() == 0) return x;
  const Eigen::MatrixXd SAt = S ? Eigen::MatrixXd(*S * A.transpose()) : Eigen::MatrixXd(A.transpose());
  const Eigen::MatrixXd ASA = A * SAt;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(ASA);
  if (lu.rank() < A.rows()) throw Error(ErrorCode::rank_deficient, "constraint set is rank deficient");
  return x - SAt * lu.solve(A * x);
}

}  // namespace priorforest
