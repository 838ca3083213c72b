#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

#include "priorforest/formula.hpp"
#include "priorforest/latent.hpp"

namespace priorforest {

/// Named numeric columns of equal length.
struct DataTable {
  std::vector<std::string> names;
  std::map<std::string, std::vector<double>> columns;
  size_t rows = 0;

  bool has(const std::string& name) const { return columns.count(name) > 0; }
  const std::vector<double>& col(const std::string& name) const;
  void add(const std::string& name, std::vector<double> values);
};

DataTable parse_csv(const std::string& text);
DataTable read_csv(const std::string& path);
std::string to_csv(const DataTable& t);

/// Dense matrix from whitespace- or comma-separated text.
Eigen::MatrixXd parse_matrix(const std::string& text);
Eigen::MatrixXd read_matrix_file(const std::string& path);
std::string format_matrix(const Eigen::MatrixXd& m);

struct ModelInputs {
  DataTable data;
  // generic0 precision matrices and Besag graphs by the names used in the formula.
  std::map<std::string, Eigen::MatrixXd> matrices;
  std::map<std::string, NeighborGraph> graphs;
  std::string trials_column;
  std::string offset_column;
};

/// Everything inference needs about the observations and latent structures.
struct ModelFrame {
  ModelSpec spec;
  int n = 0;
  bool has_response = true;
  Eigen::VectorXd y;
  Eigen::VectorXd trials;
  Eigen::VectorXd offset;
  // Fixed-effect design; the first column is the intercept when present.
  Eigen::MatrixXd X;
  std::vector<std::string> fixed_names;
  // Formula order.
  std::vector<LatentComponent> components;
  // 0-based level of each observation, per component.
  std::vector<std::vector<int>> index;
  // A_k R_k, so that the observation-level covariance of component k is F F^T.
  std::vector<Eigen::MatrixXd> obs_factor;
  std::vector<std::string> warnings;

  /// Number of variance parameters (components plus eps for gaussian).
  int effect_count() const { return static_cast<int>(components.size()) + (spec.has_residual() ? 1 : 0); }
  /// Observation-level covariance of effect k (eps is the identity).
  Eigen::MatrixXd obs_cov(int k) const;
  int effect_index(const std::string& label) const;
};

ModelFrame build_frame(const ModelSpec& spec, const ModelInputs& inputs);

}  // namespace priorforest
