#include "priorforest/error.hpp"

namespace priorforest {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::parse_error: return "parse_error";
    case ErrorCode::invalid_formula: return "invalid_formula";
    case ErrorCode::reserved_label: return "reserved_label";
    case ErrorCode::duplicate_label: return "duplicate_label";
    case ErrorCode::unknown_model: return "unknown_model";
    case ErrorCode::unknown_name: return "unknown_name";
    case ErrorCode::duplicate_use: return "duplicate_use";
    case ErrorCode::missing_component: return "missing_component";
    case ErrorCode::name_collision: return "name_collision";
    case ErrorCode::invalid_tree: return "invalid_tree";
    case ErrorCode::invalid_prior: return "invalid_prior";
    case ErrorCode::median_rule: return "median_rule";
    case ErrorCode::jeffreys_not_allowed: return "jeffreys_not_allowed";
    case ErrorCode::root_bracket: return "root_bracket";
    case ErrorCode::unattainable: return "unattainable";
    case ErrorCode::not_symmetric: return "not_symmetric";
    case ErrorCode::asymmetric_graph: return "asymmetric_graph";
    case ErrorCode::out_of_range: return "out_of_range";
    case ErrorCode::rank_deficient: return "rank_deficient";
    case ErrorCode::numerical: return "numerical";
    case ErrorCode::convergence: return "convergence";
    case ErrorCode::improper_prior: return "improper_prior";
    case ErrorCode::io_error: return "io_error";
    case ErrorCode::invalid_data: return "invalid_data";
    case ErrorCode::invalid_answer: return "invalid_answer";
    case ErrorCode::not_found: return "not_found";
  }
  return "unknown";
}

}  // namespace priorforest
