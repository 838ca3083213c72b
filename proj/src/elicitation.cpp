#include "priorforest/elicitation.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "priorforest/error.hpp"
#include "priorforest/numerics.hpp"

namespace priorforest {

DefaultPrior default_prior_for(NodeRole role, Likelihood likelihood, bool single_tree) {
  DefaultPrior d;
  if (role == NodeRole::split) {
    d.w = WeightChoice{WeightVariant::dirichlet, 0.5, 0.5};
    return d;
  }
  if (likelihood != Likelihood::gaussian) {
    d.V = VarianceChoice{VarianceVariant::pc0, 1.6, 0.05};
  } else if (role == NodeRole::top && single_tree) {
    d.V = VarianceChoice{VarianceVariant::jeffreys, 0, 0};
  } else {
    d.V = VarianceChoice{VarianceVariant::pc0, 3.0, 0.05};
  }
  return d;
}

PcParamResult find_pc_prior_param(double lower, double upper, double prob, int N, uint64_t seed) {
  if (!(lower > 0 && upper > lower)) throw Error(ErrorCode::invalid_prior, "need 0 < lower < upper");
  if (!(prob > 0 && prob < 1)) throw Error(ErrorCode::invalid_prior, "prob must lie in (0, 1)");
  if (N < 10000) throw Error(ErrorCode::invalid_prior, "N must be at least 1e4");

  // eta = U * c with c = E * Z / -log(0.05), shared across all U.
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> ex(1.0);
  std::normal_distribution<double> nz(0.0, 1.0);
  const double scale = -std::log(0.05);
  std::vector<double> c(static_cast<size_t>(N));
  for (auto& x : c) {
    const double e = ex(rng);
    x = e * nz(rng) / scale;
  }
  std::sort(c.begin(), c.end());
  const double ll = std::log(lower), lu = std::log(upper);
  auto coverage = [&](double U) {
    // ll < U c < lu  <=>  ll/U < c < lu/U
    auto a = std::upper_bound(c.begin(), c.end(), ll / U);
    auto b = std::lower_bound(c.begin(), c.end(), lu / U);
    return b > a ? static_cast<double>(b - a) / static_cast<double>(N) : 0.0;
  };

  // Coverage decreases in U once past its maximum; the maximum is at U -> 0
  // when the interval contains 1.
  double best_u = 1e-6, best = coverage(best_u);
  for (double lu10 = -6; lu10 <= 6; lu10 += 0.05) {
    const double U = std::pow(10.0, lu10);
    const double cv = coverage(U);
    if (cv > best) {
      best = cv;
      best_u = U;
    }
  }
  // Fewer than 10 draws outside the interval cannot resolve the coverage.
  if (prob > best || static_cast<double>(N) * (1 - prob) < 10) {
    throw Error(ErrorCode::unattainable, "no U gives coverage " + std::to_string(prob) + " of (" +
                                             std::to_string(lower) + ", " + std::to_string(upper) +
                                             "); the largest attainable is " + std::to_string(best));
  }
  double lo = best_u, hi = 1e6;
  if (coverage(hi) > prob) throw Error(ErrorCode::unattainable, "coverage stays above prob for every U");
  for (int it = 0; it < 200 && hi / lo > 1 + 1e-12; ++it) {
    const double mid = std::sqrt(lo * hi);
    (coverage(mid) >= prob ? lo : hi) = mid;
  }
  PcParamResult r;
  r.U = lo;
  r.coverage = coverage(lo);
  auto q = [&](double p) {
    const double pos = p * (N - 1);
    const size_t i = static_cast<size_t>(std::floor(pos));
    const double f = pos - static_cast<double>(i);
    const double v = i + 1 < c.size() ? c[i] * (1 - f) + c[i + 1] * f : c[i];
    return std::exp(r.U * v);
  };
  r.q_lower = q((1 - prob) / 2);
  r.q_upper = q((1 + prob) / 2);
  return r;
}

const std::vector<std::pair<std::string, std::string>>& guide_script() {
  // Reconstructed question flow; wording is ours.
  static const std::vector<std::pair<std::string, std::string>> script = {
      {"guide.tree",
       "Current tree structure: {children}. Keep it, or enter a new tree structure? Changing the tree resets every split "
       "to the default Dirichlet prior."},
      {"split.knowledge",
       "Split {node} divides the variance between {first} and {second}. Do you have knowledge about how the variance "
       "is distributed?"},
      {"split.absent",
       "Is one side of {node} possibly absent, so that the prior should shrink towards it contributing no variance? "
       "Answer which side may be absent: first ({first}), second ({second}) or none."},
      {"split.median",
       "What is your median for the proportion of the variance of {node} that is due to {first}?"},
      {"split.concentration",
       "How much probability should lie in the interval on the logit scale within log(3) of your median? (between 0 "
       "and 1)"},
      {"root.knowledge",
       "Do you have knowledge about the scale of the variance of {node}?"},
      {"root.method",
       "Specify the scale directly as Prob(sqrt(V) > U) = alpha (pc), or give an interval that exp(eta) should lie in "
       "with a given probability (interval)?"},
      {"root.pc", "Enter U and alpha so that Prob(sqrt(V[{node}]) > U) = alpha."},
      {"root.interval",
       "Enter lower, upper and prob so that Prob(lower < exp(eta) < upper) = prob, with eta the effect of {node}."},
  };
  return script;
}

namespace {

const std::string& script_text(const std::string& id) {
  for (const auto& [k, v] : guide_script()) {
    if (k == id) return v;
  }
  throw Error(ErrorCode::not_found, "no guide question " + id);
}

std::string fill(std::string t, const std::string& key, const std::string& value) {
  for (size_t p = t.find(key); p != std::string::npos; p = t.find(key, p + value.size())) t.replace(p, key.size(), value);
  return t;
}

bool single_tree(const PriorForest& f) { return f.roots.size() == 1 && f.node(f.roots[0]).is_split(); }

void rebuild_queue(GuideState& s) {
  s.queue = s.forest.splits_post_order();
  for (int r : s.forest.roots) s.queue.push_back(r);
  s.pos = 0;
}

// Steps for queue entries: splits occupy the first splits_post_order().size() slots.
size_t split_count(const GuideState& s) { return s.forest.splits_post_order().size(); }

void enter_current(GuideState& s) {
  const size_t ns = split_count(s);
  while (s.pos < s.queue.size()) {
    if (s.pos < ns) {
      const auto& n = s.forest.node(s.queue[s.pos]);
      if (n.children.size() == 2) {
        s.step = "split.knowledge";
        return;
      }
      s.w[n.id] = WeightChoice{WeightVariant::dirichlet, 0.5, 0.5};
      ++s.pos;
      continue;
    }
    s.step = "root.knowledge";
    return;
  }
  s.phase = GuideState::Phase::finished;
  s.step.clear();
}

void advance(GuideState& s) {
  ++s.pos;
  s.absent = -1;
  enter_current(s);
}

bool yes_no(const GuideAnswer& a) {
  if (a.choice == "yes") return true;
  if (a.choice == "no") return false;
  throw Error(ErrorCode::invalid_answer, "expected yes or no, got \"" + a.choice + "\"");
}

std::vector<double> numbers(const GuideAnswer& a, size_t k) {
  if (a.values.size() != k) {
    throw Error(ErrorCode::invalid_answer, "expected " + std::to_string(k) + " numbers, got " + std::to_string(a.values.size()));
  }
  for (double v : a.values) {
    if (!std::isfinite(v)) throw Error(ErrorCode::invalid_answer, "answer values must be finite");
  }
  return a.values;
}

}  // namespace

GuideState guide_start(const ModelSpec& spec, const PriorForest& forest) {
  GuideState s;
  s.spec = spec;
  s.forest = forest.empty() ? default_forest(spec) : forest;
  validate_forest(s.forest, spec);
  s.phase = GuideState::Phase::tree_building;
  s.step = "guide.tree";
  return s;
}

GuideQuestion guide_question(const GuideState& s) {
  GuideQuestion q;
  q.id = s.step;
  if (s.phase == GuideState::Phase::finished) {
    q.id = "finished";
    q.kind = "none";
    return q;
  }
  std::string text = script_text(s.step);
  if (s.phase == GuideState::Phase::tree_building) {
    q.kind = "choice";
    q.options = {"keep", "tree"};
    q.fields = {"tree"};
    q.text = fill(text, "{children}", render_tree_string(s.forest));
    return q;
  }
  const auto& n = s.forest.node(s.queue[s.pos]);
  q.node = n.id;
  text = fill(text, "{node}", n.name);
  if (n.children.size() >= 2) {
    text = fill(text, "{first}", s.forest.node(n.children[0]).name);
    text = fill(text, "{second}", s.forest.node(n.children[1]).name);
    text = fill(text, "{children}", std::to_string(n.children.size()));
  }
  q.text = text;
  if (s.step == "split.knowledge" || s.step == "root.knowledge") {
    q.kind = "choice";
    q.options = {"yes", "no"};
  } else if (s.step == "split.absent") {
    q.kind = "choice";
    q.options = {"none", "first", "second"};
  } else if (s.step == "split.median") {
    q.kind = "numbers";
    q.fields = {"median"};
  } else if (s.step == "split.concentration") {
    q.kind = "numbers";
    q.fields = {"concentration"};
  } else if (s.step == "root.method") {
    q.kind = "choice";
    q.options = {"pc", "interval"};
  } else if (s.step == "root.pc") {
    q.kind = "numbers";
    q.fields = {"U", "alpha"};
  } else if (s.step == "root.interval") {
    q.kind = "numbers";
    q.fields = {"lower", "upper", "prob"};
  }
  return q;
}

PriorChoices guide_choices(const GuideState& s) {
  PriorChoices c;
  c.tree = render_tree_string(s.forest);
  for (const auto& [id, w] : s.w) c.w[s.forest.node(id).name] = w;
  for (const auto& [id, v] : s.V) c.V[s.forest.node(id).name] = v;
  return c;
}

GuideStep guide_next(GuideState& s, const GuideAnswer& a) {
  if (s.phase == GuideState::Phase::finished) throw Error(ErrorCode::invalid_answer, "the guide has already finished");
  s.history.emplace_back(s.step, a);
  const std::string step = s.step;
  if (step == "guide.tree") {
    if (a.choice == "tree") {
      PriorForest f = parse_tree_string(a.text, s.spec);
      validate_forest(f, s.spec);
      s.forest = std::move(f);
      s.w.clear();
      s.V.clear();
    } else if (a.choice != "keep") {
      throw Error(ErrorCode::invalid_answer, "expected keep or tree, got \"" + a.choice + "\"");
    }
    s.phase = GuideState::Phase::node_walk;
    rebuild_queue(s);
    enter_current(s);
  } else {
    const int id = s.queue[s.pos];
    const auto lik = s.spec.likelihood;
    if (step == "split.knowledge") {
      if (yes_no(a)) {
        s.step = "split.absent";
      } else {
        s.w[id] = *default_prior_for(NodeRole::split, lik, single_tree(s.forest)).w;
        advance(s);
      }
    } else if (step == "split.absent") {
      if (a.choice == "none") s.absent = 0;
      else if (a.choice == "first") s.absent = 1;
      else if (a.choice == "second") s.absent = 2;
      else throw Error(ErrorCode::invalid_answer, "expected none, first or second, got \"" + a.choice + "\"");
      s.step = "split.median";
    } else if (step == "split.median") {
      const double m = numbers(a, 1)[0];
      if (!(m > 0 && m < 1)) throw Error(ErrorCode::invalid_answer, "median must lie in (0, 1)");
      s.median = m;
      if (s.absent == 0) {
        s.step = "split.concentration";
      } else {
        // Absent first child shrinks its proportion to 0.
        WeightChoice w{s.absent == 1 ? WeightVariant::pc0 : WeightVariant::pc1, m, 0.5};
        check_weight_choice(w);
        s.w[id] = w;
        advance(s);
      }
    } else if (step == "split.concentration") {
      const double c = numbers(a, 1)[0];
      if (!(c > 0 && c < 1)) throw Error(ErrorCode::invalid_answer, "concentration must lie in (0, 1)");
      WeightChoice w{WeightVariant::pcM, s.median, c};
      check_weight_choice(w);
      s.w[id] = w;
      advance(s);
    } else if (step == "root.knowledge") {
      if (yes_no(a)) {
        s.step = "root.method";
      } else {
        const bool singleton = !s.forest.node(id).is_split();
        auto d = *default_prior_for(singleton ? NodeRole::singleton : NodeRole::top, lik, single_tree(s.forest)).V;
        s.V[id] = d;
        advance(s);
      }
    } else if (step == "root.method") {
      if (a.choice == "pc") s.step = "root.pc";
      else if (a.choice == "interval") s.step = "root.interval";
      else throw Error(ErrorCode::invalid_answer, "expected pc or interval, got \"" + a.choice + "\"");
    } else if (step == "root.pc") {
      auto v = numbers(a, 2);
      VarianceChoice ch{VarianceVariant::pc0, v[0], v[1]};
      try {
        check_variance_choice(ch);
      } catch (const Error& e) {
        throw Error(ErrorCode::invalid_answer, e.what());
      }
      s.V[id] = ch;
      advance(s);
    } else if (step == "root.interval") {
      auto v = numbers(a, 3);
      PcParamResult r;
      try {
        r = find_pc_prior_param(v[0], v[1], v[2]);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::unattainable) throw;
        throw Error(ErrorCode::invalid_answer, e.what());
      }
      s.V[id] = VarianceChoice{VarianceVariant::pc0, r.U, 0.05};
      advance(s);
    } else {
      throw Error(ErrorCode::invalid_answer, "unexpected guide step " + step);
    }
  }
  GuideStep out;
  if (s.phase == GuideState::Phase::finished) {
    out.finished = true;
    out.choices = guide_choices(s);
  } else {
    out.question = guide_question(s);
  }
  return out;
}

}  // namespace priorforest
