#include "priorforest/prior.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <mutex>
#include <sstream>

#include "priorforest/elicitation.hpp"
#include "priorforest/error.hpp"

namespace priorforest {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

double cached_alpha(int p) {
  static std::mutex mu;
  static std::map<int, double> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(p);
  if (it != cache.end()) return it->second;
  const double a = dirichlet_concentration(p);
  cache[p] = a;
  return a;
}
}  // namespace

WeightChoice flip(const WeightChoice& w) {
  WeightChoice out = w;
  switch (w.variant) {
    case WeightVariant::pc0:
      out.variant = WeightVariant::pc1;
      out.m = 1 - w.m;
      break;
    case WeightVariant::pc1:
      out.variant = WeightVariant::pc0;
      out.m = 1 - w.m;
      break;
    case WeightVariant::pcM:
      out.m = 1 - w.m;
      break;
    case WeightVariant::dirichlet:
      break;
  }
  return out;
}

int HDJointPrior::split_position(int node_id) const {
  for (size_t i = 0; i < splits.size(); ++i) {
    if (splits[i] == node_id) return static_cast<int>(i);
  }
  throw Error(ErrorCode::not_found, "node " + std::to_string(node_id) + " is not a split");
}

int HDJointPrior::root_position(int node_id) const {
  for (size_t i = 0; i < forest.roots.size(); ++i) {
    if (forest.roots[i] == node_id) return static_cast<int>(i);
  }
  throw Error(ErrorCode::not_found, "node " + std::to_string(node_id) + " is not a root");
}

int HDJointPrior::effect_position(const std::string& label) const {
  for (size_t i = 0; i < effects.size(); ++i) {
    if (effects[i] == label) return static_cast<int>(i);
  }
  throw Error(ErrorCode::unknown_name, "unknown effect \"" + label + "\"");
}

const WeightKernel& HDJointPrior::kernel(int split) const {
  auto it = kernels_.find(split);
  if (it == kernels_.end()) {
    throw Error(ErrorCode::invalid_data, "PC prior on split " + forest.node(split).name +
                                             " needs the model data to be tabulated");
  }
  return *it->second;
}

double HDJointPrior::dirichlet_alpha(int split) const {
  auto it = alpha_.find(split);
  if (it != alpha_.end()) return it->second;
  return cached_alpha(static_cast<int>(forest.node(split).children.size()));
}

bool HDJointPrior::jeffreys_root() const {
  for (const auto& [id, v] : variance_choice) {
    if (v.variant == VarianceVariant::jeffreys) return true;
  }
  return false;
}

double HDJointPrior::log_prior_tree_param(const TreeParameterization& theta) const {
  if (theta.V.size() != forest.roots.size() || theta.w.size() != splits.size()) {
    throw Error(ErrorCode::invalid_data, "tree parameterization has the wrong dimension");
  }
  double lp = 0;
  for (size_t i = 0; i < forest.roots.size(); ++i) {
    lp += variance_logdensity(theta.V[i], variance_choice.at(forest.roots[i]));
  }
  for (size_t j = 0; j < splits.size(); ++j) {
    const int s = splits[j];
    const auto& w = theta.w[j];
    for (double x : w) {
      if (!(x > 0 && x < 1)) return -kInf;
    }
    const auto& ch = weight_choice.at(s);
    if (ch.variant != WeightVariant::dirichlet) {
      lp += kernel(s).log_density(w[0]);
    } else {
      const double a = dirichlet_alpha(s);
      const double p = static_cast<double>(w.size());
      double t = std::lgamma(p * a) - p * std::lgamma(a);
      for (double x : w) t += (a - 1) * std::log(x);
      lp += t;
    }
  }
  return lp;
}

std::pair<Eigen::VectorXd, double> HDJointPrior::to_log_variances(const TreeParameterization& theta) const {
  Eigen::VectorXd out(dim());
  std::vector<double> var(forest.nodes.size(), 0.0);
  std::function<void(int)> down = [&](int k) {
    const auto& n = forest.node(k);
    if (n.children.empty()) {
      out(effect_position(n.name)) = std::log(var[static_cast<size_t>(k)]);
      return;
    }
    const auto& w = theta.w[static_cast<size_t>(split_position(k))];
    if (w.size() != n.children.size()) throw Error(ErrorCode::invalid_data, "weight vector has the wrong length");
    for (size_t c = 0; c < n.children.size(); ++c) {
      var[static_cast<size_t>(n.children[c])] = var[static_cast<size_t>(k)] * w[c];
      down(n.children[c]);
    }
  };
  for (size_t i = 0; i < forest.roots.size(); ++i) {
    var[static_cast<size_t>(forest.roots[i])] = theta.V[i];
    down(forest.roots[i]);
  }
  return {out, log_jacobian(out)};
}

double HDJointPrior::node_variance(int node_id, const Eigen::VectorXd& logvar) const {
  const auto& n = forest.node(node_id);
  if (n.children.empty()) return std::exp(logvar(effect_position(n.name)));
  double s = 0;
  for (int c : n.children) s += node_variance(c, logvar);
  return s;
}

TreeParameterization HDJointPrior::from_log_variances(const Eigen::VectorXd& logvar) const {
  if (logvar.size() != dim()) throw Error(ErrorCode::invalid_data, "log-variance vector has the wrong dimension");
  TreeParameterization t;
  for (int r : forest.roots) t.V.push_back(node_variance(r, logvar));
  for (int s : splits) {
    const double total = node_variance(s, logvar);
    std::vector<double> w;
    for (int c : forest.node(s).children) w.push_back(node_variance(c, logvar) / total);
    t.w.push_back(std::move(w));
  }
  return t;
}

double HDJointPrior::log_jacobian(const Eigen::VectorXd& logvar) const {
  double lj = -logvar.sum();
  for (int s : splits) {
    lj += static_cast<double>(forest.node(s).children.size() - 1) * std::log(node_variance(s, logvar));
  }
  return lj;
}

double HDJointPrior::log_prior_logvar(const Eigen::VectorXd& logvar) const {
  return log_prior_tree_param(from_log_variances(logvar)) - log_jacobian(logvar);
}

Eigen::MatrixXd HDJointPrior::base_covariance(int node_id) const {
  if (!frame) throw Error(ErrorCode::invalid_data, "model data needed for split covariances");
  const auto& n = forest.node(node_id);
  if (n.children.empty()) return frame->obs_cov(frame->effect_index(n.name));
  const auto& ch = weight_choice.at(node_id);
  const size_t p = n.children.size();
  std::vector<double> w0(p, 1.0 / static_cast<double>(p));
  if (p == 2) {
    if (ch.variant == WeightVariant::pc0) w0 = {0.0, 1.0};
    if (ch.variant == WeightVariant::pc1) w0 = {1.0, 0.0};
    if (ch.variant == WeightVariant::pcM) w0 = {ch.m, 1 - ch.m};
  }
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(frame->n, frame->n);
  for (size_t i = 0; i < p; ++i) {
    if (w0[i] > 0) S += w0[i] * base_covariance(n.children[i]);
  }
  return S;
}

void HDJointPrior::build_kernels() {
  kernels_.clear();
  for (int s : splits) {
    const auto& n = forest.node(s);
    const auto& ch = weight_choice.at(s);
    alpha_[s] = cached_alpha(static_cast<int>(n.children.size()));
    if (ch.variant == WeightVariant::dirichlet || !frame) continue;
    kernels_[s] = WeightKernel::build(ch, base_covariance(n.children[0]), base_covariance(n.children[1]));
  }
}

HDJointPrior assemble_forest(const ModelSpec& spec, const PriorForest& forest, std::map<int, WeightChoice> w,
                             std::map<int, VarianceChoice> V, std::shared_ptr<const ModelFrame> frame,
                             const GaussianPrior& intercept, const std::map<std::string, GaussianPrior>& covariate) {
  validate_forest(forest, spec);
  HDJointPrior p;
  p.spec = spec;
  p.forest = forest;
  p.frame = std::move(frame);
  p.intercept = intercept;
  p.splits = forest.splits_post_order();
  p.effects = spec.effect_labels();
  const bool single_tree = forest.roots.size() == 1 && forest.node(forest.roots[0]).is_split();

  for (int s : p.splits) {
    auto it = w.find(s);
    WeightChoice ch = it != w.end() ? it->second : *default_prior_for(NodeRole::split, spec.likelihood, single_tree).w;
    check_weight_choice(ch);
    if (ch.variant != WeightVariant::dirichlet && forest.node(s).children.size() != 2) {
      throw Error(ErrorCode::invalid_prior, "PC priors need a dual split; " + forest.node(s).name + " has " +
                                                std::to_string(forest.node(s).children.size()) + " children");
    }
    p.weight_choice[s] = ch;
  }
  for (const auto& [id, ch] : w) {
    if (!p.weight_choice.count(id)) throw Error(ErrorCode::invalid_prior, "weight prior given for a node that is not a split");
  }
  for (int r : forest.roots) {
    const bool singleton = !forest.node(r).is_split();
    auto it = V.find(r);
    VarianceChoice ch =
        it != V.end() ? it->second
                      : *default_prior_for(singleton ? NodeRole::singleton : NodeRole::top, spec.likelihood, single_tree).V;
    check_variance_choice(ch);
    if (ch.variant == VarianceVariant::jeffreys) {
      if (singleton) {
        throw Error(ErrorCode::jeffreys_not_allowed, "singleton " + forest.node(r).name + " needs a proper prior");
      }
      if (!single_tree) {
        throw Error(ErrorCode::jeffreys_not_allowed, "Jeffreys' prior needs a single tree holding every component");
      }
      if (spec.likelihood != Likelihood::gaussian) {
        throw Error(ErrorCode::jeffreys_not_allowed, "Jeffreys' prior is only available for gaussian likelihood");
      }
    }
    p.variance_choice[r] = ch;
  }
  for (const auto& [id, ch] : V) {
    if (!p.variance_choice.count(id)) {
      throw Error(ErrorCode::invalid_prior, "variance prior given for a node that is not a top node or singleton");
    }
  }
  for (const auto& [name, g] : covariate) {
    if (name == "intercept") {
      p.intercept = g;
      continue;
    }
    if (std::find(spec.covariates.begin(), spec.covariates.end(), name) == spec.covariates.end()) {
      throw Error(ErrorCode::unknown_name, "covariate prior given for unknown covariate \"" + name + "\"");
    }
    if (!(g.sd > 0)) throw Error(ErrorCode::invalid_prior, "covariate prior sd must be positive");
  }
  if (!(p.intercept.sd > 0)) throw Error(ErrorCode::invalid_prior, "intercept prior sd must be positive");
  for (const auto& c : spec.covariates) {
    auto it = covariate.find(c);
    p.covariate[c] = it != covariate.end() ? it->second : GaussianPrior{};
  }
  p.build_kernels();
  return p;
}

HDJointPrior assemble(const ModelSpec& spec, const PriorChoices& choices, std::shared_ptr<const ModelFrame> frame,
                      const GaussianPrior& intercept, const std::map<std::string, GaussianPrior>& covariate,
                      const std::vector<std::string>& reserved) {
  PriorForest forest;
  bool default_tree = false;
  if (choices.tree.find_first_not_of(" \t\r\n;") == std::string::npos) {
    forest = default_forest(spec);
    default_tree = true;
  } else {
    forest = parse_tree_string(choices.tree, spec, reserved);
  }

  std::map<int, WeightChoice> w;
  for (const auto& [name, ch] : choices.w) {
    const int id = forest.find(name);
    if (id < 0) throw Error(ErrorCode::unknown_name, "weight prior names unknown split \"" + name + "\"");
    const auto& n = forest.node(id);
    if (!n.is_split()) throw Error(ErrorCode::invalid_prior, "weight prior names \"" + name + "\", which is not a split");
    WeightChoice c = ch;
    if (n.children.size() == 2 && !n.user_children.empty() && n.user_children[0] != n.children[0]) c = flip(c);
    w[id] = c;
  }
  std::map<int, VarianceChoice> V;
  for (const auto& [name, ch] : choices.V) {
    const int id = forest.find(name);
    if (id < 0) throw Error(ErrorCode::unknown_name, "variance prior names unknown node \"" + name + "\"");
    if (!forest.node(id).is_root()) {
      throw Error(ErrorCode::invalid_prior, "variance prior names \"" + name + "\", which is not a top node or singleton");
    }
    V[id] = ch;
  }
  HDJointPrior p = assemble_forest(spec, forest, std::move(w), std::move(V), std::move(frame), intercept, covariate);
  p.default_tree = default_tree;
  if (default_tree) p.warnings.emplace_back(kDefaultTreeWarning);
  if (p.frame) {
    for (const auto& msg : p.frame->warnings) p.warnings.push_back(msg);
  }
  return p;
}

PriorChoices canonical_choices(const HDJointPrior& prior) {
  PriorChoices c;
  c.tree = render_tree_string(prior.forest);
  for (const auto& [id, ch] : prior.weight_choice) c.w[prior.forest.node(id).name] = ch;
  for (const auto& [id, ch] : prior.variance_choice) c.V[prior.forest.node(id).name] = ch;
  return c;
}

TreeParameterization draw_tree_param(const HDJointPrior& prior, std::mt19937_64& rng, bool* pinned) {
  TreeParameterization t;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int r : prior.forest.roots) {
    const auto& ch = prior.variance_choice.at(r);
    if (variance_proper(ch)) {
      t.V.push_back(sample_variance(ch, rng));
    } else {
      t.V.push_back(1.0);
      if (pinned) *pinned = true;
    }
  }
  for (int s : prior.splits) {
    const auto& ch = prior.weight_choice.at(s);
    const size_t p = prior.forest.node(s).children.size();
    std::vector<double> w(p);
    if (ch.variant != WeightVariant::dirichlet) {
      double q = prior.kernel(s).quantile(unif(rng));
      q = std::clamp(q, 1e-300, 1 - 1e-16);
      w = {q, 1 - q};
    } else {
      std::gamma_distribution<double> g(prior.dirichlet_alpha(s), 1.0);
      double sum = 0;
      for (auto& x : w) sum += (x = g(rng));
      for (auto& x : w) x /= sum;
    }
    t.w.push_back(std::move(w));
  }
  return t;
}

PriorSamples sample_prior(const HDJointPrior& prior, int n, uint64_t seed) {
  PriorSamples out;
  std::mt19937_64 rng(seed);
  out.logvar.resize(n, prior.dim());
  out.theta.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    auto t = draw_tree_param(prior, rng, &out.jeffreys_pinned);
    out.logvar.row(i) = prior.to_log_variances(t).first.transpose();
    out.theta.push_back(std::move(t));
  }
  return out;
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.7g", v);
  return buf;
}

std::string weight_prior_label(const HDJointPrior& prior, int split) {
  const auto& n = prior.forest.node(split);
  const auto& ch = prior.weight_choice.at(split);
  auto w = [&](int c) { return "w[" + prior.forest.node(c).name + "/" + n.name + "]"; };
  std::string lhs;
  if (n.children.size() == 2) {
    lhs = w(n.children[0]);
  } else {
    lhs = "(";
    for (size_t i = 0; i + 1 < n.children.size(); ++i) lhs += (i ? ", " : "") + w(n.children[i]);
    lhs += ")";
  }
  std::string rhs;
  switch (ch.variant) {
    case WeightVariant::pc0: rhs = "PC0(" + format_number(ch.m) + ")"; break;
    case WeightVariant::pc1: rhs = "PC1(" + format_number(ch.m) + ")"; break;
    case WeightVariant::pcM: rhs = "PCM(" + format_number(ch.m) + ", " + format_number(ch.c) + ")"; break;
    case WeightVariant::dirichlet: rhs = "Dirichlet(" + std::to_string(n.children.size()) + ")"; break;
  }
  return lhs + " ~ " + rhs;
}

std::string variance_prior_label(const HDJointPrior& prior, int root) {
  const auto& name = prior.forest.node(root).name;
  const auto& ch = prior.variance_choice.at(root);
  switch (ch.variant) {
    case VarianceVariant::pc0:
      return "sqrt(V)[" + name + "] ~ PC0(" + format_number(ch.p1) + ", " + format_number(ch.p2) + ")";
    case VarianceVariant::jeffreys:
      return "V[" + name + "] ~ Jeffreys'";
    case VarianceVariant::invgam:
      return "V[" + name + "] ~ InvGamma(" + format_number(ch.p1) + ", " + format_number(ch.p2) + ")";
    case VarianceVariant::halfcauchy:
      return "sqrt(V)[" + name + "] ~ HalfCauchy(" + format_number(ch.p1) + ")";
  }
  return "";
}

std::string prior_block_text(const HDJointPrior& prior) {
  std::ostringstream os;
  os << "Tree structure: " << render_tree_string(prior.forest) << "\n\n";
  if (!prior.splits.empty()) {
    os << "Weight priors:\n";
    for (int s : prior.splits) os << "\t" << weight_prior_label(prior, s) << "\n";
  }
  std::vector<int> tops, singles;
  for (int r : prior.forest.roots) (prior.forest.node(r).is_split() ? tops : singles).push_back(r);
  if (!tops.empty()) {
    os << "Total variance priors:\n";
    for (int r : tops) os << "\t" << variance_prior_label(prior, r) << "\n";
  }
  if (!singles.empty()) {
    os << "Individual variance priors:\n";
    for (int r : singles) os << "\t" << variance_prior_label(prior, r) << "\n";
  }
  return os.str();
}

std::string summary_text(const HDJointPrior& prior) {
  std::ostringstream os;
  os << "Model: " << prior.spec.formula_text << "\n";
  os << prior_block_text(prior);
  std::vector<std::string> cov;
  auto normal = [](const std::string& name, const GaussianPrior& g) {
    return name + " ~ N(" + format_number(g.mean) + ", " + format_number(g.sd) + "^2)";
  };
  if (prior.spec.has_intercept) cov.push_back(normal("intercept", prior.intercept));
  for (const auto& c : prior.spec.covariates) cov.push_back(normal(c, prior.covariate.at(c)));
  if (!cov.empty()) {
    os << "\nCovariate priors: ";
    for (size_t i = 0; i < cov.size(); ++i) os << (i ? ", " : "") << cov[i];
    os << "\n";
  }
  return os.str();
}

}  // namespace priorforest
