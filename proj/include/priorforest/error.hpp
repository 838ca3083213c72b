#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace priorforest {

// Machine-readable error categories. The service maps these to HTTP codes
// and echoes the name in every error payload.
enum class ErrorCode {
  parse_error,
  invalid_formula,
  reserved_label,
  duplicate_label,
  unknown_model,
  unknown_name,
  duplicate_use,
  missing_component,
  name_collision,
  invalid_tree,
  invalid_prior,
  median_rule,
  jeffreys_not_allowed,
  root_bracket,
  unattainable,
  not_symmetric,
  asymmetric_graph,
  out_of_range,
  rank_deficient,
  numerical,
  convergence,
  improper_prior,
  io_error,
  invalid_data,
  invalid_answer,
  not_found,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace priorforest
