#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace priorforest {

inline constexpr std::string_view kResidualLabel = "eps";

enum class LatentKind { iid, rw1, rw2, besag, generic0 };
enum class Likelihood { gaussian, binomial, poisson };

std::string_view to_string(LatentKind kind);
std::string_view to_string(Likelihood lik);
LatentKind parse_latent_kind(std::string_view name);
Likelihood parse_likelihood(std::string_view name);

/// One `mc(label, ...)` term of the model formula.
struct ComponentDecl {
  std::string label;
  LatentKind kind = LatentKind::iid;
  bool constr = false;
  bool lin_constr = false;
  bool scale_model = false;
  // Names (or literal paths) resolved by the caller against the data bundle.
  std::string cmatrix;
  std::string graph;
  // Original key/value text, kept so the formula can be echoed back.
  std::vector<std::pair<std::string, std::string>> options;
};

struct ModelSpec {
  std::string response;
  std::vector<std::string> covariates;
  std::vector<ComponentDecl> components;
  bool has_intercept = true;
  Likelihood likelihood = Likelihood::gaussian;
  std::string formula_text;

  bool has_residual() const { return likelihood == Likelihood::gaussian; }

  /// Component labels in formula order, followed by `eps` for gaussian models.
  std::vector<std::string> effect_labels() const;

  /// Position used for canonical ordering: formula order, `eps` last.
  int canonical_rank(std::string_view label) const;

  const ComponentDecl* find_component(std::string_view label) const;
};

/// Parses `response ~ [-1 +] term (+ term)*` where a term is a covariate name
/// or `mc(label[, key = value]*)`.
ModelSpec parse_formula(std::string_view text, Likelihood likelihood = Likelihood::gaussian);

/// Re-renders the formula in normalized spacing, e.g. `y ~ x + mc(a) + mc(b)`.
std::string render_formula(const ModelSpec& spec);

}  // namespace priorforest
