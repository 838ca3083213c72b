#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "priorforest/formula.hpp"
#include "priorforest/kernels.hpp"
#include "priorforest/prior.hpp"
#include "priorforest/tree.hpp"

namespace priorforest {

enum class NodeRole { split, top, singleton };

struct DefaultPrior {
  std::optional<WeightChoice> w;
  std::optional<VarianceChoice> V;
};

/// Defaults: Dirichlet on splits; Jeffreys' on the top node of a single
/// gaussian tree, PC0(3, 0.05) on other gaussian variances, PC0(1.6, 0.05)
/// for binomial and poisson.
DefaultPrior default_prior_for(NodeRole role, Likelihood likelihood, bool single_tree);

struct PcParamResult {
  double U = 0;
  double coverage = 0;
  // Empirical (1 - prob)/2 and (1 + prob)/2 quantiles of exp(eta) at U.
  double q_lower = 0;
  double q_upper = 0;
};

/// U such that sigma ~ PC0(U, 0.05), eta | sigma ~ N(0, sigma^2) gives
/// P(lower < exp(eta) < upper) = prob, from N common random draws.
PcParamResult find_pc_prior_param(double lower, double upper, double prob, int N = 200000, uint64_t seed = 1);

struct GuideQuestion {
  std::string id;
  std::string text;
  // "choice" (pick one of options) or "numbers" (one value per field).
  std::string kind;
  std::vector<std::string> options;
  std::vector<std::string> fields;
  int node = -1;
};

struct GuideAnswer {
  std::string choice;
  std::vector<double> values;
  std::string text;
};

struct GuideState {
  enum class Phase { tree_building, node_walk, finished };
  Phase phase = Phase::tree_building;
  ModelSpec spec;
  PriorForest forest;
  // Splits in post-order, then roots.
  std::vector<int> queue;
  size_t pos = 0;
  std::string step;
  double median = 0;
  int absent = -1;
  std::map<int, WeightChoice> w;
  std::map<int, VarianceChoice> V;
  std::vector<std::pair<std::string, GuideAnswer>> history;
};

struct GuideStep {
  bool finished = false;
  GuideQuestion question;
  PriorChoices choices;
};

/// The question script as a table of (id, text template). Templates use
/// {node}, {first}, {second} and {children}.
const std::vector<std::pair<std::string, std::string>>& guide_script();

GuideState guide_start(const ModelSpec& spec, const PriorForest& forest);
GuideQuestion guide_question(const GuideState& state);
/// Applies an answer to the pending question and returns the next step.
GuideStep guide_next(GuideState& state, const GuideAnswer& answer);
/// Choices accumulated so far, keyed by canonical names.
PriorChoices guide_choices(const GuideState& state);

}  // namespace priorforest
