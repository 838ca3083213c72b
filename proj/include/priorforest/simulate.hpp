#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "priorforest/data.hpp"
#include "priorforest/prior.hpp"

namespace priorforest {

/// A ready-to-assemble example: formula, data, structures and the prior
/// choices used with it, plus the generating values.
struct ExampleModel {
  std::string name;
  std::string formula;
  Likelihood likelihood = Likelihood::gaussian;
  ModelInputs inputs;
  PriorChoices choices;
  std::map<std::string, GaussianPrior> covariate_priors;
  std::map<std::string, double> truth;
};

/// y ~ x + mc(a) + mc(b), 10 x 10 crossed design.
ExampleModel simulate_model1(uint64_t seed = 1);
/// 9 x 9 latin square with row, column and a smooth plus iid treatment effect.
ExampleModel simulate_latin(uint64_t seed = 1);
/// Binomial BYM-type model on 47 areas and 327 clusters.
ExampleModel simulate_neonatal(uint64_t seed = 1);
/// 100 individuals with additive, dominance and epistasis relationship matrices.
ExampleModel simulate_wheat(uint64_t seed = 1);
/// y ~ -1 + mc(a) with a = rep(1:10, 10) and y = 0.
ExampleModel simulate_random_intercept(uint64_t seed = 1);

const std::vector<std::string>& example_names();
ExampleModel make_example(const std::string& name, uint64_t seed = 1);

/// Area graph used by the neonatal example: a 7 x 7 lattice without two
/// corners, rook neighbours.
NeighborGraph lattice_area_graph();

}  // namespace priorforest
