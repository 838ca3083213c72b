#include "priorforest/bundle.hpp"

#include <filesystem>
#include <fstream>
#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "priorforest/error.hpp"
#include "priorforest/simulate.hpp"

namespace priorforest {

namespace fs = std::filesystem;

namespace {

std::string resolve(const std::string& base, const std::string& ref) {
  fs::path p(ref);
  if (p.is_absolute()) return ref;
  return (fs::path(base) / p).lexically_normal().string();
}

[[noreturn]] void fail(const std::string& where, const std::string& msg, ErrorCode code = ErrorCode::parse_error) {
  throw Error(code, where + ": " + msg);
}

template <class F>
auto with_context(const std::string& where, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    throw Error(e.code(), where + ": " + e.what());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, where + ": " + e.what());
  }
}

std::vector<double> as_params(const json& j) {
  if (j.is_null()) return {};
  if (j.is_number()) return {j.get<double>()};
  if (j.is_array()) return j.get<std::vector<double>>();
  throw Error(ErrorCode::invalid_prior, "param must be a number or an array of numbers");
}

json data_to_json(const DataTable& t) {
  json cols = json::object();
  for (const auto& n : t.names) cols[n] = t.columns.at(n);
  return json{{"columns", cols}, {"order", t.names}};
}

DataTable data_from_json(const json& j) {
  DataTable t;
  const auto& cols = j.at("columns");
  std::vector<std::string> order;
  if (j.contains("order")) {
    order = j.at("order").get<std::vector<std::string>>();
  } else {
    for (auto it = cols.begin(); it != cols.end(); ++it) order.push_back(it.key());
  }
  for (const auto& n : order) {
    std::vector<double> v;
    for (const auto& x : cols.at(n)) v.push_back(x.is_null() ? std::numeric_limits<double>::quiet_NaN() : x.get<double>());
    t.add(n, std::move(v));
  }
  return t;
}

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::vector<double> r(static_cast<size_t>(m.cols()));
    for (Eigen::Index k = 0; k < m.cols(); ++k) r[static_cast<size_t>(k)] = m(i, k);
    rows.push_back(r);
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  if (rows.empty()) throw Error(ErrorCode::invalid_data, "matrix is empty");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size()) throw Error(ErrorCode::invalid_data, "matrix rows have unequal length");
    for (size_t k = 0; k < rows[i].size(); ++k) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
  }
  return m;
}

json graph_to_json(const NeighborGraph& g) {
  json adj = json::array();
  for (const auto& nb : g.adjacency) {
    std::vector<int> one;
    for (int b : nb) one.push_back(b + 1);
    adj.push_back(one);
  }
  return json{{"n", g.n}, {"adjacency", adj}};
}

NeighborGraph graph_from_json(const json& j) {
  NeighborGraph g;
  g.n = j.at("n").get<int>();
  const auto adj = j.at("adjacency").get<std::vector<std::vector<int>>>();
  if (static_cast<int>(adj.size()) != g.n) throw Error(ErrorCode::invalid_data, "graph adjacency has the wrong length");
  for (const auto& nb : adj) {
    std::vector<int> one;
    for (int b : nb) {
      if (b < 1 || b > g.n) throw Error(ErrorCode::out_of_range, "graph neighbour out of range");
      one.push_back(b - 1);
    }
    g.adjacency.push_back(std::move(one));
  }
  // Route through the text parser to get its symmetry checks.
  return parse_graph(format_graph(g));
}

}  // namespace

json weight_choice_to_json(const WeightChoice& w) {
  switch (w.variant) {
    case WeightVariant::pc0: return {{"prior", "pc0"}, {"param", w.m}};
    case WeightVariant::pc1: return {{"prior", "pc1"}, {"param", w.m}};
    case WeightVariant::pcM: return {{"prior", "pcM"}, {"param", {w.m, w.c}}};
    case WeightVariant::dirichlet: return {{"prior", "dirichlet"}};
  }
  return {};
}

WeightChoice weight_choice_from_json(const json& j) {
  const std::string p = j.at("prior").get<std::string>();
  const auto v = as_params(j.contains("param") ? j.at("param") : json());
  WeightChoice w;
  auto need = [&](size_t k) {
    if (v.size() != k) throw Error(ErrorCode::invalid_prior, "prior " + p + " takes " + std::to_string(k) + " parameter(s)");
  };
  if (p == "pc0" || p == "pc1") {
    need(1);
    w.variant = p == "pc0" ? WeightVariant::pc0 : WeightVariant::pc1;
    w.m = v[0];
  } else if (p == "pcM" || p == "pcm") {
    need(2);
    w.variant = WeightVariant::pcM;
    w.m = v[0];
    w.c = v[1];
  } else if (p == "dirichlet") {
    w.variant = WeightVariant::dirichlet;
  } else {
    throw Error(ErrorCode::invalid_prior, "unknown weight prior \"" + p + "\"");
  }
  check_weight_choice(w);
  return w;
}

json variance_choice_to_json(const VarianceChoice& c) {
  switch (c.variant) {
    case VarianceVariant::pc0: return {{"prior", "pc"}, {"param", {c.p1, c.p2}}};
    case VarianceVariant::jeffreys: return {{"prior", "jeffreys"}};
    case VarianceVariant::invgam: return {{"prior", "invgam"}, {"param", {c.p1, c.p2}}};
    case VarianceVariant::halfcauchy: return {{"prior", "hc"}, {"param", c.p1}};
  }
  return {};
}

VarianceChoice variance_choice_from_json(const json& j) {
  const std::string p = j.at("prior").get<std::string>();
  const auto v = as_params(j.contains("param") ? j.at("param") : json());
  VarianceChoice c;
  auto need = [&](size_t k) {
    if (v.size() != k) throw Error(ErrorCode::invalid_prior, "prior " + p + " takes " + std::to_string(k) + " parameter(s)");
  };
  if (p == "pc" || p == "pc0") {
    need(2);
    c = {VarianceVariant::pc0, v[0], v[1]};
  } else if (p == "jeffreys") {
    c = {VarianceVariant::jeffreys, 0, 0};
  } else if (p == "invgam") {
    need(2);
    c = {VarianceVariant::invgam, v[0], v[1]};
  } else if (p == "hc" || p == "halfcauchy") {
    need(1);
    c = {VarianceVariant::halfcauchy, v[0], 0};
  } else {
    throw Error(ErrorCode::invalid_prior, "unknown variance prior \"" + p + "\"");
  }
  check_variance_choice(c);
  return c;
}

json settings_to_json(const McmcSettings& s) {
  return {{"iter", s.iter},   {"warmup", s.warmup},         {"chains", s.chains},         {"seed", s.seed},
          {"thin", s.thin},   {"step_scale", s.step_scale}, {"prior_only", s.prior_only}, {"latent", s.latent},
          {"threads", s.threads}};
}

McmcSettings settings_from_json(const json& j, McmcSettings s) {
  if (j.contains("iter")) s.iter = j.at("iter").get<int>();
  if (j.contains("warmup")) s.warmup = j.at("warmup").get<int>();
  if (j.contains("chains")) s.chains = j.at("chains").get<int>();
  if (j.contains("seed")) s.seed = j.at("seed").get<uint64_t>();
  if (j.contains("thin")) s.thin = j.at("thin").get<int>();
  if (j.contains("step_scale")) s.step_scale = j.at("step_scale").get<double>();
  if (j.contains("prior_only")) s.prior_only = j.at("prior_only").get<bool>();
  if (j.contains("latent")) s.latent = j.at("latent").get<bool>();
  if (j.contains("threads")) s.threads = j.at("threads").get<int>();
  return s;
}

ProjectBundle bundle_from_json(const json& j, const std::string& base) {
  ProjectBundle b;
  if (!j.is_object()) fail("bundle", "expected a JSON object");
  const int version = j.value("version", kBundleVersion);
  if (version != kBundleVersion) fail("version", "unsupported bundle version " + std::to_string(version));
  if (!j.is_object() || !j.contains("formula")) throw Error(ErrorCode::parse_error, "bundle needs a \"formula\" string");
  b.formula = with_context("formula", [&] { return j.at("formula").get<std::string>(); });
  b.likelihood = with_context("likelihood", [&] { return parse_likelihood(j.value("likelihood", std::string("gaussian"))); });
  b.description = j.value("description", std::string());
  b.choices.tree = j.value("tree", std::string());
  if (j.contains("priors")) {
    const auto& pr = j.at("priors");
    if (pr.contains("w")) {
      for (auto it = pr.at("w").begin(); it != pr.at("w").end(); ++it) {
        b.choices.w[it.key()] = with_context("priors.w." + it.key(), [&] { return weight_choice_from_json(it.value()); });
      }
    }
    if (pr.contains("V")) {
      for (auto it = pr.at("V").begin(); it != pr.at("V").end(); ++it) {
        b.choices.V[it.key()] = with_context("priors.V." + it.key(), [&] { return variance_choice_from_json(it.value()); });
      }
    }
  }
  if (j.contains("fixed")) {
    for (auto it = j.at("fixed").begin(); it != j.at("fixed").end(); ++it) {
      GaussianPrior g = with_context("fixed." + it.key(), [&] {
        return GaussianPrior{it.value().value("mean", 0.0), it.value().value("sd", 1000.0)};
      });
      if (it.key() == "intercept") {
        b.intercept = g;
      } else {
        b.covariates[it.key()] = g;
      }
    }
  }
  if (j.contains("data")) {
    const auto& d = j.at("data");
    b.has_data = true;
    if (d.is_string()) {
      b.data_ref = d.get<std::string>();
      const std::string path = resolve(base, b.data_ref);
      b.inputs.data = with_context(path, [&] { return read_csv(path); });
    } else {
      b.inputs.data = with_context("data", [&] { return data_from_json(d); });
    }
  }
  b.inputs.trials_column = j.value("trials", std::string());
  b.inputs.offset_column = j.value("offset", std::string());
  if (j.contains("matrices")) {
    for (auto it = j.at("matrices").begin(); it != j.at("matrices").end(); ++it) {
      if (it.value().is_string()) {
        b.matrix_refs[it.key()] = it.value().get<std::string>();
        const std::string path = resolve(base, it.value().get<std::string>());
        b.inputs.matrices[it.key()] = with_context(path, [&] { return read_matrix_file(path); });
      } else {
        b.inputs.matrices[it.key()] = with_context("matrices." + it.key(), [&] { return matrix_from_json(it.value()); });
      }
    }
  }
  if (j.contains("graphs")) {
    for (auto it = j.at("graphs").begin(); it != j.at("graphs").end(); ++it) {
      if (it.value().is_string()) {
        b.graph_refs[it.key()] = it.value().get<std::string>();
        const std::string path = resolve(base, it.value().get<std::string>());
        b.inputs.graphs[it.key()] = with_context(path, [&] { return read_graph_file(path); });
      } else {
        b.inputs.graphs[it.key()] = with_context("graphs." + it.key(), [&] { return graph_from_json(it.value()); });
      }
    }
  }
  if (j.contains("sampler")) b.sampler = with_context("sampler", [&] { return settings_from_json(j.at("sampler")); });
  return b;
}

ProjectBundle load_bundle(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    // Byte offset to line number.
    const size_t upto = std::min(text.size(), static_cast<size_t>(e.byte));
    const long line = 1 + std::count(text.begin(), text.begin() + static_cast<long>(upto), '\n');
    throw Error(ErrorCode::parse_error, path + ":" + std::to_string(line) + ": invalid JSON");
  }
  const std::string base = fs::path(path).parent_path().string();
  return with_context(path, [&] { return bundle_from_json(j, base.empty() ? "." : base); });
}

json bundle_to_json(const ProjectBundle& b, bool inline_data) {
  json j;
  j["version"] = kBundleVersion;
  if (!b.description.empty()) j["description"] = b.description;
  j["formula"] = b.formula;
  j["likelihood"] = std::string(to_string(b.likelihood));
  if (!b.choices.tree.empty()) j["tree"] = b.choices.tree;
  json w = json::object(), V = json::object();
  for (const auto& [k, c] : b.choices.w) w[k] = weight_choice_to_json(c);
  for (const auto& [k, c] : b.choices.V) V[k] = variance_choice_to_json(c);
  j["priors"] = {{"w", w}, {"V", V}};
  json fixed = json::object();
  if (!(b.intercept == GaussianPrior{})) fixed["intercept"] = {{"mean", b.intercept.mean}, {"sd", b.intercept.sd}};
  for (const auto& [k, g] : b.covariates) fixed[k] = {{"mean", g.mean}, {"sd", g.sd}};
  if (!fixed.empty()) j["fixed"] = fixed;
  if (b.has_data) j["data"] = !inline_data && !b.data_ref.empty() ? json(b.data_ref) : data_to_json(b.inputs.data);
  if (!b.inputs.trials_column.empty()) j["trials"] = b.inputs.trials_column;
  if (!b.inputs.offset_column.empty()) j["offset"] = b.inputs.offset_column;
  if (!b.inputs.matrices.empty()) {
    json m = json::object();
    for (const auto& [k, mat] : b.inputs.matrices) {
      auto it = b.matrix_refs.find(k);
      m[k] = !inline_data && it != b.matrix_refs.end() ? json(it->second) : matrix_to_json(mat);
    }
    j["matrices"] = m;
  }
  if (!b.inputs.graphs.empty()) {
    json g = json::object();
    for (const auto& [k, gr] : b.inputs.graphs) {
      auto it = b.graph_refs.find(k);
      g[k] = !inline_data && it != b.graph_refs.end() ? json(it->second) : graph_to_json(gr);
    }
    j["graphs"] = g;
  }
  j["sampler"] = settings_to_json(b.sampler);
  return j;
}

void save_bundle(const ProjectBundle& b, const std::string& path, bool inline_data) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw Error(ErrorCode::io_error, "cannot write " + path);
    out << bundle_to_json(b, inline_data).dump(2) << "\n";
  }
  fs::rename(tmp, path);
}

ModelSpec bundle_spec(const ProjectBundle& b) {
  return with_context("formula", [&] { return parse_formula(b.formula, b.likelihood); });
}

HDJointPrior assemble_bundle(const ProjectBundle& b) {
  const ModelSpec spec = bundle_spec(b);
  std::shared_ptr<const ModelFrame> frame;
  std::vector<std::string> reserved;
  if (b.has_data) {
    frame = with_context("data", [&] { return std::make_shared<const ModelFrame>(build_frame(spec, b.inputs)); });
    reserved = b.inputs.data.names;
  }
  return with_context("prior", [&] {
    return assemble(spec, b.choices, frame, b.intercept, b.covariates, reserved);
  });
}

json summaries_to_json(const InferenceResult& r) {
  json out;
  for (Scale s : {Scale::tree, Scale::variance, Scale::stdev, Scale::precision}) {
    json rows = json::array();
    for (const auto& row : posterior_summaries(r, s)) {
      rows.push_back({{"param", row.param}, {"mean", row.mean}, {"median", row.median}, {"sd", row.sd}});
    }
    out["summaries"][std::string(to_string(s))] = rows;
  }
  out["acceptance"] = r.acceptance;
  out["draws"] = r.draws();
  out["warnings"] = r.warnings;
  out["settings"] = settings_to_json(r.settings);
  out["jeffreys_pinned"] = r.jeffreys_pinned;
  json ks = json::object();
  for (size_t i = 0; i < r.tree_names.size() && i < r.split_half_ks.size(); ++i) ks[r.tree_names[i]] = r.split_half_ks[i];
  out["split_half_ks"] = ks;
  return out;
}

json grid_to_json(const DensityGrid& g) {
  json d = json::array();
  // JSON has no infinity; endpoints with unbounded density are sent as null.
  for (double v : g.density) d.push_back(std::isfinite(v) ? json(v) : json(nullptr));
  return {{"parameter", g.parameter}, {"scale", std::string(to_string(g.scale))}, {"x", g.x}, {"density", d}};
}

std::string grid_to_csv(const DensityGrid& g) {
  std::ostringstream os;
  os.precision(12);
  os << "# parameter: " << g.parameter << ", scale: " << to_string(g.scale) << "\n";
  os << "x,density\n";
  for (size_t i = 0; i < g.x.size(); ++i) {
    os << g.x[i] << ",";
    if (std::isfinite(g.density[i])) {
      os << g.density[i];
    } else {
      os << "Inf";
    }
    os << "\n";
  }
  return os.str();
}

std::vector<std::string> node_parameters(const HDJointPrior& prior, int id) {
  const auto& F = prior.forest;
  const auto& n = F.node(id);
  std::vector<std::string> out;
  if (n.is_root()) out.push_back("V[" + n.name + "]");
  if (n.is_split()) {
    const size_t k = n.children.size() == 2 ? 1 : n.children.size();
    for (size_t i = 0; i < k; ++i) out.push_back("w[" + F.node(n.children[i]).name + "/" + n.name + "]");
  } else if (!n.is_root()) {
    out.push_back("sigma^2[" + n.name + "]");
  }
  return out;
}

std::vector<std::string> prior_parameters(const HDJointPrior& prior) {
  std::vector<std::string> out;
  for (int r : prior.forest.roots) {
    for (const auto& p : node_parameters(prior, r)) out.push_back(p);
  }
  for (int s : prior.splits) {
    if (prior.forest.node(s).is_root()) continue;
    for (const auto& p : node_parameters(prior, s)) out.push_back(p);
  }
  for (const auto& n : prior.forest.nodes) {
    if (!n.is_split() && !n.is_root()) out.push_back("sigma^2[" + n.name + "]");
  }
  return out;
}

DataTable prior_sample_table(const HDJointPrior& prior, const PriorSamples& ps) {
  const auto& F = prior.forest;
  DataTable t;
  for (size_t r = 0; r < F.roots.size(); ++r) {
    std::vector<double> v;
    for (const auto& th : ps.theta) v.push_back(th.V[r]);
    t.add("V[" + F.node(F.roots[r]).name + "]", std::move(v));
  }
  for (size_t k = 0; k < prior.splits.size(); ++k) {
    const auto& sn = F.node(prior.splits[k]);
    for (size_t c = 0; c < sn.children.size(); ++c) {
      std::vector<double> v;
      for (const auto& th : ps.theta) v.push_back(th.w[k][c]);
      t.add("w[" + F.node(sn.children[c]).name + "/" + sn.name + "]", std::move(v));
    }
  }
  for (size_t e = 0; e < prior.effects.size(); ++e) {
    std::vector<double> v;
    for (Eigen::Index i = 0; i < ps.logvar.rows(); ++i) v.push_back(std::exp(ps.logvar(i, static_cast<Eigen::Index>(e))));
    t.add("sigma^2[" + prior.effects[e] + "]", std::move(v));
  }
  return t;
}

std::vector<double> default_grid(const HDJointPrior& prior, const std::string& parameter, Scale scale, int points,
                                 const DataTable& samples) {
  if (points < 2) throw Error(ErrorCode::out_of_range, "a grid needs at least two points");
  std::vector<double> x(static_cast<size_t>(points));
  if (parameter.rfind("w[", 0) == 0) {
    for (int i = 0; i < points; ++i) x[static_cast<size_t>(i)] = static_cast<double>(i) / (points - 1);
    return x;
  }
  const auto open = parameter.find('[');
  const int id = open == std::string::npos ? -1 : prior.forest.find(parameter.substr(open + 1, parameter.size() - open - 2));
  if (id < 0) throw Error(ErrorCode::unknown_name, "unknown parameter \"" + parameter + "\"");
  const int root = prior.forest.root_of(id);
  if (prior.variance_choice.at(root).variant == VarianceVariant::jeffreys) {
    throw Error(ErrorCode::improper_prior, "the prior on V[" + prior.forest.node(root).name +
                                               "] is Jeffreys' and improper; its density is not plotted");
  }
  const std::string col = parameter.rfind("V[", 0) == 0 ? parameter : "sigma^2[" + prior.forest.node(id).name + "]";
  if (!samples.has(col)) throw Error(ErrorCode::unknown_name, "no prior draws for \"" + col + "\"");
  std::vector<double> v = samples.col(col);
  for (double& d : v) d = scale == Scale::stdev ? std::sqrt(d) : scale == Scale::precision ? 1 / d : d;
  std::sort(v.begin(), v.end());
  const double hi = v[static_cast<size_t>(0.99 * static_cast<double>(v.size() - 1))];
  for (int i = 0; i < points; ++i) x[static_cast<size_t>(i)] = hi * i / (points - 1);
  return x;
}

void write_bundle_dir(ProjectBundle b, const std::string& dir) {
  fs::create_directories(dir);
  auto write = [&](const std::string& name, const std::string& text) {
    std::ofstream out(fs::path(dir) / name);
    if (!out) throw Error(ErrorCode::io_error, "cannot write " + (fs::path(dir) / name).string());
    out << text;
  };
  if (b.has_data) {
    b.data_ref = "data.csv";
    write(b.data_ref, to_csv(b.inputs.data));
  }
  for (const auto& [k, m] : b.inputs.matrices) {
    b.matrix_refs[k] = k + ".txt";
    write(b.matrix_refs[k], format_matrix(m));
  }
  for (const auto& [k, g] : b.inputs.graphs) {
    b.graph_refs[k] = k + ".graph";
    write(b.graph_refs[k], format_graph(g));
  }
  save_bundle(b, (fs::path(dir) / "bundle.json").string(), false);
}

ProjectBundle example_bundle(const std::string& name, uint64_t seed) {
  const ExampleModel e = make_example(name, seed);
  ProjectBundle b;
  b.description = "simulated example " + e.name + ", seed " + std::to_string(seed);
  b.formula = e.formula;
  b.likelihood = e.likelihood;
  b.choices = e.choices;
  for (const auto& [k, g] : e.covariate_priors) {
    if (k == "intercept") {
      b.intercept = g;
    } else {
      b.covariates[k] = g;
    }
  }
  b.inputs = e.inputs;
  b.has_data = true;
  return b;
}

}  // namespace priorforest
