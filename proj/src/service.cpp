#include "priorforest/service.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "httplib.h"
#include "priorforest/error.hpp"

namespace priorforest {

namespace fs = std::filesystem;

std::string resolve_session_dir(const std::string& option) {
  if (!option.empty()) return option;
  if (const char* env = std::getenv("PRIORFOREST_SESSION_DIR")) return env;
  return {};
}

namespace {

int node_ref(const PriorForest& F, const json& ref) {
  int id = -1;
  if (ref.is_number_integer()) {
    id = ref.get<int>();
    if (id < 0 || id >= static_cast<int>(F.nodes.size())) id = -1;
  } else if (ref.is_string()) {
    id = F.find(ref.get<std::string>());
  }
  if (id < 0) throw Error(ErrorCode::not_found, "no node " + ref.dump());
  return id;
}

std::string kind_name(const TreeNode& n) {
  switch (n.kind) {
    case NodeKind::leaf: return "leaf";
    case NodeKind::split: return "split";
    case NodeKind::singleton_root: return "singleton";
    case NodeKind::tree_root: return "top";
  }
  return "leaf";
}

int http_status(ErrorCode c) {
  switch (c) {
    case ErrorCode::not_found: return 404;
    case ErrorCode::numerical:
    case ErrorCode::convergence:
    case ErrorCode::improper_prior: return 422;
    default: return 400;
  }
}

json error_body(const std::string& code, const std::string& msg) {
  return {{"error", {{"code", code}, {"message", msg}}}};
}

std::string random_hex() {
  static std::mutex m;
  static std::mt19937_64 rng(std::random_device{}());
  std::lock_guard lock(m);
  std::ostringstream os;
  os << std::hex << (rng() & 0xffffffffffULL);
  return os.str();
}

}  // namespace

std::string edit_tree(const HDJointPrior& prior, const json& edit) {
  const std::string op = edit.at("op").get<std::string>();
  if (op == "set") return edit.value("tree", std::string());

  // Working copy of the structure; dead nodes are skipped when rendering.
  PriorForest F = prior.forest;
  std::vector<bool> dead(F.nodes.size(), false);
  auto remove_root = [&](int id) { F.roots.erase(std::remove(F.roots.begin(), F.roots.end(), id), F.roots.end()); };

  if (op == "detach") {
    const int x = node_ref(F, edit.at("node"));
    const int p = F.node(x).parent;
    if (p < 0) throw Error(ErrorCode::invalid_tree, "\"" + F.node(x).name + "\" is already a top node");
    auto& pc = F.node(p).children;
    pc.erase(std::remove(pc.begin(), pc.end(), x), pc.end());
    F.node(x).parent = -1;
    F.roots.push_back(x);
    if (pc.size() == 1) {
      // A split left with one child dissolves into it.
      const int c = pc[0];
      const int g = F.node(p).parent;
      F.node(c).parent = g;
      if (g < 0) {
        std::replace(F.roots.begin(), F.roots.end(), p, c);
      } else {
        auto& gc = F.node(g).children;
        std::replace(gc.begin(), gc.end(), p, c);
      }
      dead[static_cast<size_t>(p)] = true;
    }
  } else if (op == "attach") {
    const int x = node_ref(F, edit.at("node"));
    const int t = node_ref(F, edit.at("parent"));
    if (F.node(x).parent >= 0) throw Error(ErrorCode::invalid_tree, "only top nodes can be attached; detach \"" + F.node(x).name + "\" first");
    if (!F.node(t).is_split()) throw Error(ErrorCode::invalid_tree, "\"" + F.node(t).name + "\" is not a split; use merge");
    if (F.root_of(t) == x) throw Error(ErrorCode::invalid_tree, "cannot attach a tree below itself");
    remove_root(x);
    F.node(x).parent = t;
    F.node(t).children.push_back(x);
  } else if (op == "merge") {
    std::vector<int> ids;
    for (const auto& r : edit.at("nodes")) ids.push_back(node_ref(F, r));
    if (ids.size() < 2) throw Error(ErrorCode::invalid_tree, "merge needs at least two nodes");
    if (std::set<int>(ids.begin(), ids.end()).size() != ids.size()) throw Error(ErrorCode::invalid_tree, "merge lists a node twice");
    for (int id : ids) {
      if (F.node(id).parent >= 0) throw Error(ErrorCode::invalid_tree, "only top nodes can be merged; detach \"" + F.node(id).name + "\" first");
    }
    TreeNode n;
    n.id = static_cast<int>(F.nodes.size());
    n.kind = NodeKind::tree_root;
    n.children = ids;
    for (int id : ids) {
      remove_root(id);
      F.node(id).parent = n.id;
    }
    F.nodes.push_back(n);
    dead.push_back(false);
    F.roots.push_back(n.id);
  } else {
    throw Error(ErrorCode::invalid_tree, "unknown tree edit \"" + op + "\"");
  }

  // Splits get fresh names from their leaves; the parser canonicalizes anyway.
  std::function<std::string(int)> name_of = [&](int id) -> std::string {
    const auto& n = F.node(id);
    if (n.children.empty()) return n.name;
    std::string s;
    for (int c : n.children) s += (s.empty() ? "" : "_") + name_of(c);
    return "t_" + s;
  };
  std::vector<std::string> parts;
  std::function<void(int)> rec = [&](int id) {
    const auto& n = F.node(id);
    if (n.children.empty()) return;
    std::string s = name_of(id) + " = (";
    for (size_t i = 0; i < n.children.size(); ++i) {
      rec(n.children[i]);
      s += (i ? ", " : "") + name_of(n.children[i]);
    }
    parts.push_back(s + ")");
  };
  for (int r : F.roots) {
    if (dead[static_cast<size_t>(r)]) continue;
    if (F.node(r).children.empty()) {
      parts.push_back("(" + F.node(r).name + ")");
    } else {
      rec(r);
    }
  }
  std::string out;
  for (const auto& p : parts) out += (out.empty() ? "" : "; ") + p;
  return out;
}

json tree_view(const HDJointPrior& prior) {
  const auto& F = prior.forest;
  json nodes = json::array();
  for (const auto& n : F.nodes) {
    json j{{"id", n.id}, {"name", n.name}, {"kind", kind_name(n)}, {"children", n.children},
           {"parent", n.parent >= 0 ? json(n.parent) : json(nullptr)}, {"leaves", F.leaves_under(n.id)},
           {"parameters", node_parameters(prior, n.id)}};
    if (!n.alias.empty() && n.alias != n.name) j["alias"] = n.alias;
    if (n.is_split()) {
      j["weight_prior"] = weight_prior_label(prior, n.id);
      j["weight_choice"] = weight_choice_to_json(prior.weight_choice.at(n.id));
    }
    if (n.is_root()) {
      j["variance_prior"] = variance_prior_label(prior, n.id);
      j["variance_choice"] = variance_choice_to_json(prior.variance_choice.at(n.id));
    }
    nodes.push_back(j);
  }
  return {{"tree", render_tree_string(F)}, {"default_tree", prior.default_tree}, {"roots", F.roots},
          {"nodes", nodes}, {"warnings", prior.warnings}};
}

void canonicalize_bundle(ProjectBundle& b, const HDJointPrior& prior) {
  PriorChoices c;
  if (!prior.default_tree) c.tree = render_tree_string(prior.forest);
  for (const auto& [key, w] : b.choices.w) {
    const int id = prior.forest.find(key);
    if (id >= 0) c.w[prior.forest.node(id).name] = prior.weight_choice.at(id);
  }
  for (const auto& [key, v] : b.choices.V) {
    const int id = prior.forest.find(key);
    if (id >= 0) c.V[prior.forest.node(id).name] = prior.variance_choice.at(id);
  }
  b.choices = std::move(c);
}

Service::Service(ServiceConfig config) : config_(std::move(config)) {
  if (!config_.session_dir.empty()) {
    fs::create_directories(config_.session_dir);
    load_sessions();
  }
  for (int i = 0; i < std::max(1, config_.workers); ++i) pool_.emplace_back([this] { work(); });
}

Service::~Service() {
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
  }
  cv_.notify_all();
  for (auto& t : pool_) t.join();
}

void Service::load_sessions() {
  for (const auto& e : fs::directory_iterator(config_.session_dir)) {
    if (e.path().extension() != ".json") continue;
    try {
      auto s = std::make_shared<Session>();
      s->id = e.path().stem().string();
      s->bundle = load_bundle(e.path().string());
      s->prior = std::make_shared<const HDJointPrior>(assemble_bundle(s->bundle));
      sessions_[s->id] = s;
    } catch (const std::exception& ex) {
      std::cerr << "skipping session file " << e.path().string() << ": " << ex.what() << "\n";
    }
  }
}

void Service::persist(const Session& s) {
  if (config_.session_dir.empty()) return;
  save_bundle(s.bundle, (fs::path(config_.session_dir) / (s.id + ".json")).string(), true);
}

std::string Service::create_session(const json& body) {
  auto s = std::make_shared<Session>();
  if (body.contains("example")) {
    s->bundle = example_bundle(body.at("example").get<std::string>(), body.value("seed", uint64_t{1}));
  } else if (body.contains("path")) {
    s->bundle = load_bundle(body.at("path").get<std::string>());
  } else {
    s->bundle = bundle_from_json(body, ".");
  }
  auto prior = assemble_bundle(s->bundle);
  canonicalize_bundle(s->bundle, prior);
  s->prior = std::make_shared<const HDJointPrior>(std::move(prior));
  std::lock_guard lock(mu_);
  s->id = "s" + std::to_string(++counter_) + "-" + random_hex();
  persist(*s);
  sessions_[s->id] = s;
  return s->id;
}

std::shared_ptr<Session> Service::find_session(const std::string& id) {
  std::lock_guard lock(mu_);
  if (id.empty()) {
    if (sessions_.size() == 1) return sessions_.begin()->second;
    throw Error(ErrorCode::not_found, sessions_.empty() ? "no session; POST /session first"
                                                        : "several sessions exist; pass ?session=<id> or X-Session-Id");
  }
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw Error(ErrorCode::not_found, "no session \"" + id + "\"");
  return it->second;
}

std::vector<std::string> Service::session_ids() {
  std::lock_guard lock(mu_);
  std::vector<std::string> ids;
  for (const auto& [k, v] : sessions_) ids.push_back(k);
  return ids;
}

std::string Service::submit(const std::shared_ptr<Session>& s, const McmcSettings& settings) {
  auto job = std::make_shared<Job>();
  auto prior = s->prior;
  {
    std::lock_guard lock(mu_);
    job->id = "j" + std::to_string(++counter_) + "-" + random_hex();
    job->session = s->id;
    jobs_[job->id] = job;
    queue_.emplace_back(job, [prior, settings] {
      const InferenceResult r = run_mcmc(*prior, settings);
      json out = summaries_to_json(r);
      out["table"] = format_summary_table(posterior_summaries(r, Scale::variance));
      return out;
    });
  }
  cv_.notify_one();
  return job->id;
}

void Service::work() {
  for (;;) {
    std::pair<std::shared_ptr<Job>, std::function<json()>> item;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      item = std::move(queue_.front());
      queue_.pop_front();
      item.first->status = "running";
    }
    json result, error;
    try {
      result = item.second();
    } catch (const Error& e) {
      error = error_body(std::string(to_string(e.code())), e.what())["error"];
    } catch (const std::exception& e) {
      error = error_body("internal", e.what())["error"];
    }
    std::lock_guard lock(mu_);
    if (error.is_null()) {
      item.first->result = std::move(result);
      item.first->status = "done";
    } else {
      item.first->error = std::move(error);
      item.first->status = "failed";
    }
  }
}

void Service::mount(httplib::Server& srv) {
  using Req = httplib::Request;
  using Res = httplib::Response;
  using Handler = std::function<json(const Req&, Res&)>;

  auto guard = [](Handler h) {
    return [h](const Req& req, Res& res) {
      json out;
      try {
        out = h(req, res);
        if (res.status == -1) res.status = 200;
      } catch (const Error& e) {
        res.status = http_status(e.code());
        out = error_body(std::string(to_string(e.code())), e.what());
      } catch (const json::exception& e) {
        res.status = 400;
        out = error_body("parse_error", e.what());
      } catch (const std::exception& e) {
        res.status = 500;
        out = error_body("internal", e.what());
      }
      res.set_content(out.dump(), "application/json");
    };
  };
  auto body_of = [](const Req& req) { return req.body.empty() ? json::object() : json::parse(req.body); };
  auto session_of = [this](const Req& req) {
    std::string id = req.get_param_value("session");
    if (id.empty()) id = req.get_header_value("X-Session-Id");
    return find_session(id);
  };
  // Runs `f` on a copy of the bundle; the session changes only if reassembly succeeds.
  auto mutate = [this](Session& s, const std::function<void(ProjectBundle&)>& f) {
    ProjectBundle b = s.bundle;
    f(b);
    auto prior = assemble_bundle(b);
    canonicalize_bundle(b, prior);
    s.bundle = std::move(b);
    s.prior = std::make_shared<const HDJointPrior>(std::move(prior));
    persist(s);
  };
  auto state = [](const Session& s) {
    json j = tree_view(*s.prior);
    j["session"] = s.id;
    j["summary"] = summary_text(*s.prior);
    return j;
  };

  srv.Post("/session", guard([this, body_of, state](const Req& req, Res& res) {
    const std::string id = create_session(body_of(req));
    auto s = find_session(id);
    std::lock_guard lock(s->mu);
    res.status = 201;
    return state(*s);
  }));

  srv.Get("/sessions", guard([this](const Req&, Res&) { return json{{"sessions", session_ids()}}; }));

  srv.Get("/session/export", guard([session_of](const Req& req, Res&) {
    auto s = session_of(req);
    std::lock_guard lock(s->mu);
    return bundle_to_json(s->bundle, true);
  }));

  srv.Get("/tree", guard([session_of, state](const Req& req, Res&) {
    auto s = session_of(req);
    std::lock_guard lock(s->mu);
    return state(*s);
  }));

  srv.Post("/tree/edit", guard([session_of, body_of, mutate, state](const Req& req, Res&) {
    auto s = session_of(req);
    const json edit = body_of(req);
    std::lock_guard lock(s->mu);
    const std::string tree = edit_tree(*s->prior, edit);
    std::vector<std::string> notes;
    mutate(*s, [&](ProjectBundle& b) {
      b.choices.tree = tree;
      b.choices.w.clear();
      // Keep total-variance choices for top nodes whose leaf set survives.
      const ModelSpec spec = bundle_spec(b);
      PriorForest f = tree.empty() ? default_forest(spec) : parse_tree_string(tree, spec, b.inputs.data.names);
      std::map<std::string, VarianceChoice> keep;
      for (const auto& [name, v] : b.choices.V) {
        const int id = f.find(name);
        if (id < 0 || !f.node(id).is_root()) continue;
        if (v.variant == VarianceVariant::jeffreys && !(f.roots.size() == 1 && f.node(id).is_split())) {
          notes.push_back("dropped Jeffreys' prior on V[" + name + "]; it needs a single tree");
          continue;
        }
        keep[name] = v;
      }
      b.choices.V = keep;
    });
    s->guide.reset();
    json j = state(*s);
    j["notes"] = notes;
    return j;
  }));

  srv.Post(R"(/node/(\d+)/prior)", guard([session_of, body_of, mutate, state](const Req& req, Res&) {
    auto s = session_of(req);
    const json body = body_of(req);
    std::lock_guard lock(s->mu);
    const int id = std::stoi(req.matches[1]);
    const auto& F = s->prior->forest;
    if (id < 0 || id >= static_cast<int>(F.nodes.size())) throw Error(ErrorCode::not_found, "no node " + std::to_string(id));
    const TreeNode n = F.node(id);
    const std::string which = body.value("target", n.is_split() ? "w" : "V");
    const bool reset = body.value("prior", std::string()) == "default";
    mutate(*s, [&](ProjectBundle& b) {
      if (which == "w") {
        if (!n.is_split()) throw Error(ErrorCode::invalid_prior, "\"" + n.name + "\" is not a split");
        if (reset) {
          b.choices.w.erase(n.name);
        } else {
          b.choices.w[n.name] = weight_choice_from_json(body);
        }
      } else if (which == "V") {
        if (!n.is_root()) throw Error(ErrorCode::invalid_prior, "\"" + n.name + "\" is not a top node");
        if (reset) {
          b.choices.V.erase(n.name);
        } else {
          b.choices.V[n.name] = variance_choice_from_json(body);
        }
      } else {
        throw Error(ErrorCode::invalid_prior, "target must be w or V");
      }
    });
    return state(*s);
  }));

  srv.Get(R"(/node/(\d+)/density)", guard([session_of](const Req& req, Res&) {
    auto s = session_of(req);
    std::shared_ptr<const HDJointPrior> prior;
    {
      std::lock_guard lock(s->mu);
      prior = s->prior;
    }
    const int id = std::stoi(req.matches[1]);
    if (id < 0 || id >= static_cast<int>(prior->forest.nodes.size())) throw Error(ErrorCode::not_found, "no node " + std::to_string(id));
    const Scale scale = req.has_param("scale") ? parse_scale(req.get_param_value("scale")) : Scale::variance;
    const int points = req.has_param("points") ? std::stoi(req.get_param_value("points")) : 201;
    if (points < 2 || points > 100000) throw Error(ErrorCode::out_of_range, "points must be in [2, 100000]");
    json grids = json::array();
    DataTable samples;
    for (const auto& p : node_parameters(*prior, id)) {
      std::vector<double> x;
      if (req.has_param("max") && p.rfind("w[", 0) != 0) {
        x.resize(static_cast<size_t>(points));
        const double hi = std::stod(req.get_param_value("max"));
        for (int i = 0; i < points; ++i) x[static_cast<size_t>(i)] = hi * i / (points - 1);
      } else {
        if (samples.names.empty() && p.rfind("w[", 0) != 0) samples = prior_sample_table(*prior, sample_prior(*prior, 20000, 1));
        x = default_grid(*prior, p, scale, points, samples);
      }
      grids.push_back(grid_to_json(export_density_grid(*prior, p, scale, x)));
    }
    return json{{"node", id}, {"grids", grids}};
  }));

  srv.Post("/guide/start", guard([session_of](const Req& req, Res&) {
    auto s = session_of(req);
    std::lock_guard lock(s->mu);
    s->guide = guide_start(s->prior->spec, s->prior->forest);
    const GuideQuestion q = guide_question(*s->guide);
    return json{{"finished", false},
                {"question", {{"id", q.id}, {"text", q.text}, {"kind", q.kind}, {"options", q.options},
                              {"fields", q.fields}, {"node", q.node}}}};
  }));

  srv.Post("/guide/answer", guard([session_of, body_of, mutate, state](const Req& req, Res&) {
    auto s = session_of(req);
    const json body = body_of(req);
    std::lock_guard lock(s->mu);
    if (!s->guide) throw Error(ErrorCode::invalid_answer, "no guide in progress; POST /guide/start first");
    GuideAnswer a;
    a.choice = body.value("choice", std::string());
    a.text = body.value("text", std::string());
    if (body.contains("values")) a.values = body.at("values").get<std::vector<double>>();
    GuideState trial = *s->guide;
    const GuideStep step = guide_next(trial, a);
    if (step.finished) {
      mutate(*s, [&](ProjectBundle& b) { b.choices = step.choices; });
      s->guide.reset();
      json j = state(*s);
      j["finished"] = true;
      return j;
    }
    s->guide = std::move(trial);
    const auto& q = step.question;
    return json{{"finished", false},
                {"question", {{"id", q.id}, {"text", q.text}, {"kind", q.kind}, {"options", q.options},
                              {"fields", q.fields}, {"node", q.node}}}};
  }));

  srv.Get("/summary", guard([session_of](const Req& req, Res&) {
    auto s = session_of(req);
    std::lock_guard lock(s->mu);
    return json{{"summary", summary_text(*s->prior)}, {"warnings", s->prior->warnings}};
  }));

  srv.Post("/sample-prior", guard([session_of, body_of](const Req& req, Res&) {
    auto s = session_of(req);
    const json body = body_of(req);
    std::shared_ptr<const HDJointPrior> prior;
    {
      std::lock_guard lock(s->mu);
      prior = s->prior;
    }
    const int n = body.value("n", 1000);
    if (n < 1 || n > 1000000) throw Error(ErrorCode::out_of_range, "n must be in [1, 1000000]");
    const PriorSamples ps = sample_prior(*prior, n, body.value("seed", uint64_t{1}));
    const DataTable t = prior_sample_table(*prior, ps);
    json cols = json::object();
    for (const auto& name : t.names) cols[name] = t.col(name);
    return json{{"n", n}, {"jeffreys_pinned", ps.jeffreys_pinned}, {"samples", cols}};
  }));

  srv.Post("/infer", guard([this, session_of, body_of](const Req& req, Res& res) {
    auto s = session_of(req);
    const json body = body_of(req);
    std::lock_guard lock(s->mu);
    if (!s->bundle.has_data) throw Error(ErrorCode::invalid_data, "the session has no data");
    McmcSettings settings = settings_from_json(body, s->bundle.sampler);
    // A shorter run without an explicit warmup keeps the usual third.
    if (!body.contains("warmup") && settings.warmup >= settings.iter) settings.warmup = settings.iter / 3;
    check_settings(settings);
    const std::string id = submit(s, settings);
    res.status = 202;
    return json{{"job", id}, {"status", "queued"}};
  }));

  srv.Get(R"(/job/([\w-]+))", guard([this](const Req& req, Res&) {
    std::lock_guard lock(mu_);
    auto it = jobs_.find(req.matches[1]);
    if (it == jobs_.end()) throw Error(ErrorCode::not_found, "no job \"" + std::string(req.matches[1]) + "\"");
    const Job& j = *it->second;
    json out{{"job", j.id}, {"session", j.session}, {"status", j.status}};
    if (j.status == "done") out["result"] = j.result;
    if (j.status == "failed") out["error"] = j.error;
    return out;
  }));

  if (!config_.static_dir.empty()) srv.set_mount_point("/", config_.static_dir);
}

int serve(const ServiceConfig& config, const std::string& host, int port) {
  Service service(config);
  httplib::Server srv;
  service.mount(srv);
  std::cerr << "listening on http://" << host << ":" << port << "\n";
  if (!srv.listen(host, port)) throw Error(ErrorCode::io_error, "cannot listen on " + host + ":" + std::to_string(port));
  return 0;
}

}  // namespace priorforest
