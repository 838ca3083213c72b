#pragma once

#include <Eigen/Dense>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "priorforest/data.hpp"
#include "priorforest/formula.hpp"
#include "priorforest/kernels.hpp"
#include "priorforest/tree.hpp"

namespace priorforest {

struct GaussianPrior {
  double mean = 0;
  double sd = 1000;
  bool operator==(const GaussianPrior&) const = default;
};

/// What the user asked for, keyed by split aliases / canonical names and by
/// root or singleton names. Empty tree means the default tree.
struct PriorChoices {
  std::string tree;
  std::map<std::string, WeightChoice> w;
  std::map<std::string, VarianceChoice> V;
};

/// Per tree root: total variance V; per split: full weight vector over its
/// children in canonical order.
struct TreeParameterization {
  std::vector<double> V;
  std::vector<std::vector<double>> w;
};

class HDJointPrior {
 public:
  ModelSpec spec;
  PriorForest forest;
  // Keyed by node id of the canonical forest.
  std::map<int, WeightChoice> weight_choice;
  std::map<int, VarianceChoice> variance_choice;
  GaussianPrior intercept;
  std::map<std::string, GaussianPrior> covariate;
  std::vector<std::string> warnings;
  bool default_tree = false;
  std::shared_ptr<const ModelFrame> frame;

  // Splits in post-order; indexes TreeParameterization::w.
  std::vector<int> splits;
  // Effect labels in formula order (+ eps); indexes log-variance vectors.
  std::vector<std::string> effects;

  int dim() const { return static_cast<int>(effects.size()); }
  int split_position(int node_id) const;
  int root_position(int node_id) const;
  int effect_position(const std::string& label) const;

  bool has_kernel(int split) const { return kernels_.count(split) > 0; }
  const WeightKernel& kernel(int split) const;
  double dirichlet_alpha(int split) const;
  bool jeffreys_root() const;

  double log_prior_tree_param(const TreeParameterization& theta) const;
  /// Log-variances in `effects` order and log |d logvar / d theta|.
  std::pair<Eigen::VectorXd, double> to_log_variances(const TreeParameterization& theta) const;
  TreeParameterization from_log_variances(const Eigen::VectorXd& logvar) const;
  double log_jacobian(const Eigen::VectorXd& logvar) const;
  double log_prior_logvar(const Eigen::VectorXd& logvar) const;

  /// Variance of a node (leaf, split or root) implied by log-variances.
  double node_variance(int node_id, const Eigen::VectorXd& logvar) const;

  /// Builds weight kernels for PC splits from the frame's structures.
  void build_kernels();
  /// Observation-level covariance of a node with lower splits at their base models.
  Eigen::MatrixXd base_covariance(int node_id) const;

 private:
  std::map<int, std::shared_ptr<const WeightKernel>> kernels_;
  std::map<int, double> alpha_;
};

/// Fills defaults, resolves names, flips PC choices that were stated against
/// the user's child order, validates Jeffreys' legality, builds kernels if a
/// frame is given.
HDJointPrior assemble(const ModelSpec& spec, const PriorChoices& choices,
                      std::shared_ptr<const ModelFrame> frame = nullptr, const GaussianPrior& intercept = {},
                      const std::map<std::string, GaussianPrior>& covariate = {},
                      const std::vector<std::string>& reserved = {});

/// Same, from an already-built forest with canonical-order choices.
HDJointPrior assemble_forest(const ModelSpec& spec, const PriorForest& forest, std::map<int, WeightChoice> w,
                             std::map<int, VarianceChoice> V, std::shared_ptr<const ModelFrame> frame,
                             const GaussianPrior& intercept, const std::map<std::string, GaussianPrior>& covariate);

/// Canonical choices keyed by canonical names, with the rendered tree.
PriorChoices canonical_choices(const HDJointPrior& prior);

WeightChoice flip(const WeightChoice& w);

struct PriorSamples {
  Eigen::MatrixXd logvar;                 // draws x effects
  std::vector<TreeParameterization> theta;
  bool jeffreys_pinned = false;
};

/// Direct draws. Jeffreys roots are pinned at V = 1 and flagged.
PriorSamples sample_prior(const HDJointPrior& prior, int n, uint64_t seed);
/// One draw of the tree parameterization with caller-owned RNG.
TreeParameterization draw_tree_param(const HDJointPrior& prior, std::mt19937_64& rng, bool* pinned = nullptr);

std::string format_number(double v);
std::string weight_prior_label(const HDJointPrior& prior, int split);
std::string variance_prior_label(const HDJointPrior& prior, int root);
/// Tree, weight and variance priors block.
std::string prior_block_text(const HDJointPrior& prior);
/// Model line, prior block and covariate priors.
std::string summary_text(const HDJointPrior& prior);

inline constexpr const char* kDefaultTreeWarning = "Did not find a tree, using default tree structure instead.";

}  // namespace priorforest
