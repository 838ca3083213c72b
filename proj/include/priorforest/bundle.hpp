#pragma once

#include <map>
#include <memory>
#include <string>

#include "json.hpp"
#include "priorforest/data.hpp"
#include "priorforest/inference.hpp"
#include "priorforest/prior.hpp"

namespace priorforest {

using nlohmann::json;

inline constexpr int kBundleVersion = 1;

/// Everything needed to rebuild one HDJointPrior and run inference on it.
struct ProjectBundle {
  std::string formula;
  Likelihood likelihood = Likelihood::gaussian;
  PriorChoices choices;
  GaussianPrior intercept;
  std::map<std::string, GaussianPrior> covariates;
  ModelInputs inputs;
  bool has_data = false;
  McmcSettings sampler;
  std::string description;

  // File references as written in the bundle, kept so saving preserves them.
  std::string data_ref;
  std::map<std::string, std::string> matrix_refs;
  std::map<std::string, std::string> graph_refs;
};

/// `base_dir` resolves relative file references.
ProjectBundle bundle_from_json(const json& j, const std::string& base_dir = ".");
ProjectBundle load_bundle(const std::string& path);
/// With `inline_data` every table, matrix and graph is embedded.
json bundle_to_json(const ProjectBundle& b, bool inline_data = false);
void save_bundle(const ProjectBundle& b, const std::string& path, bool inline_data = false);

ModelSpec bundle_spec(const ProjectBundle& b);
/// Parses, builds the data frame when data is present, and assembles.
HDJointPrior assemble_bundle(const ProjectBundle& b);

json weight_choice_to_json(const WeightChoice& w);
json variance_choice_to_json(const VarianceChoice& v);
WeightChoice weight_choice_from_json(const json& j);
VarianceChoice variance_choice_from_json(const json& j);

json settings_to_json(const McmcSettings& s);
McmcSettings settings_from_json(const json& j, McmcSettings base = {});

json summaries_to_json(const InferenceResult& r);
json grid_to_json(const DensityGrid& g);
std::string grid_to_csv(const DensityGrid& g);

/// Plottable prior parameters: V[top], w[child/split] (first child only for
/// dual splits) and sigma^2[leaf] for leaves inside trees.
std::vector<std::string> prior_parameters(const HDJointPrior& prior);
std::vector<std::string> node_parameters(const HDJointPrior& prior, int node_id);
/// Columns V[..], w[..] (every child) and sigma^2[..] of direct prior draws.
DataTable prior_sample_table(const HDJointPrior& prior, const PriorSamples& samples);
/// Even grid on [0, 1] for weights, else on [0, 99% prior quantile] on `scale`.
/// Throws improper_prior when the parameter sits under a Jeffreys' top node.
std::vector<double> default_grid(const HDJointPrior& prior, const std::string& parameter, Scale scale, int points,
                                 const DataTable& samples);

/// Writes the bundle next to its data, matrix and graph files.
void write_bundle_dir(ProjectBundle b, const std::string& dir);

/// Bundle of a simulated example with inline data.
ProjectBundle example_bundle(const std::string& name, uint64_t seed = 1);

}  // namespace priorforest
