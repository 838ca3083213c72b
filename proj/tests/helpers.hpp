#pragma once

#include <functional>
#include <string>

#include "doctest.h"
#include "priorforest/bundle.hpp"
#include "priorforest/elicitation.hpp"
#include "priorforest/service.hpp"
#include "priorforest/error.hpp"
#include "priorforest/simulate.hpp"

namespace pft {

using namespace priorforest;

// Code of the Error thrown by f, or "none".
inline std::string code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return std::string(to_string(e.code()));
  }
  return "none";
}

inline std::shared_ptr<const ModelFrame> frame_of(const ExampleModel& e) {
  const ModelSpec spec = parse_formula(e.formula, e.likelihood);
  return std::make_shared<const ModelFrame>(build_frame(spec, e.inputs));
}

inline HDJointPrior assemble_example(const ExampleModel& e) {
  return assemble_bundle(example_bundle(e.name, 1));
}

// Random-intercept context: a = rep(1:10, 10), y = 0, with the given tree and
// weight choice on s1.
inline HDJointPrior random_intercept_prior(const std::string& tree, std::map<std::string, WeightChoice> w = {},
                                           std::map<std::string, VarianceChoice> V = {}) {
  ExampleModel e = simulate_random_intercept();
  e.choices.tree = tree;
  e.choices.w = std::move(w);
  e.choices.V = std::move(V);
  const ModelSpec spec = parse_formula(e.formula, e.likelihood);
  return assemble(spec, e.choices, frame_of(e), {}, {}, e.inputs.data.names);
}

inline std::string golden_path(const std::string& name) { return std::string(PRIORFOREST_TEST_DIR) + "/golden/" + name; }

}  // namespace pft
