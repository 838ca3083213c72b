#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "priorforest/formula.hpp"

namespace priorforest {

/// Undirected neighbour graph, 0-based region ids.
struct NeighborGraph {
  int n = 0;
  std::vector<std::vector<int>> adjacency;

  int connected_components(std::vector<int>* membership = nullptr) const;
};

/// Text format: first token `n`, then per region `id k nb_1 ... nb_k` (1-based).
NeighborGraph parse_graph(const std::string& text);
NeighborGraph read_graph_file(const std::string& path);
std::string format_graph(const NeighborGraph& g);

struct StructureOptions {
  bool constr = false;
  bool lin_constr = false;
  bool scale_model = false;
  std::optional<NeighborGraph> graph;
  // generic0 precision matrix.
  std::optional<Eigen::MatrixXd> precision;
};

struct LatentComponent {
  std::string label;
  LatentKind kind = LatentKind::iid;
  int n = 0;
  Eigen::MatrixXd precision;
  int rank_deficiency = 0;
  // One constraint per row, A x = 0.
  Eigen::MatrixXd constraints;
  // Constraint-respecting generalized inverse of the precision and a factor R
  // with covariance = R R^T (R has one column per retained direction).
  Eigen::MatrixXd covariance;
  Eigen::MatrixXd cov_factor;
  // Geometric mean of the covariance diagonal before scaling (1 if unscaled).
  double typical_variance = 1.0;
  bool scaled = false;
  std::vector<std::string> warnings;
};

/// Standard GMRF precisions: identity, first/second-order difference penalties,
/// Besag degree-minus-adjacency, or the user's matrix for generic0.
LatentComponent build_structure(LatentKind kind, int n, const StructureOptions& options,
                                const std::string& label = "");

/// Recomputes covariance/cov_factor from precision and constraints.
void compute_covariance(LatentComponent& c);

/// Multiplies the precision by the typical variance so that the geometric mean
/// of the constrained marginal variances becomes 1.
LatentComponent scale_to_typical_variance(const LatentComponent& c);

/// Scales a bare precision matrix (no constraints beyond its null space).
Eigen::MatrixXd scale_precision(const Eigen::MatrixXd& Q);

/// x - S A^T (A S A^T)^{-1} A x with S = identity unless given.
Eigen::VectorXd apply_constraints(const Eigen::VectorXd& x, const Eigen::MatrixXd& A,
                                  const Eigen::MatrixXd* S = nullptr);

/// Orthonormal basis of the null space of A (columns); identity when A is empty.
Eigen::MatrixXd null_space_basis(const Eigen::MatrixXd& A, int n);

}  // namespace priorforest
