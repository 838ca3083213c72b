#include "priorforest/tree.hpp"

#include <algorithm>
#include <cctype>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "priorforest/error.hpp"

namespace priorforest {

int PriorForest::find(std::string_view name) const {
  for (const auto& n : nodes) {
    if (n.name == name) return n.id;
  }
  for (const auto& n : nodes) {
    if (!n.alias.empty() && n.alias == name) return n.id;
  }
  return -1;
}

std::vector<int> PriorForest::leaf_ids_under(int id) const {
  std::vector<int> out;
  std::function<void(int)> rec = [&](int k) {
    const auto& n = node(k);
    if (n.children.empty()) {
      out.push_back(k);
      return;
    }
    for (int c : n.children) rec(c);
  };
  rec(id);
  return out;
}

std::vector<std::string> PriorForest::leaves_under(int id) const {
  std::vector<std::string> out;
  for (int k : leaf_ids_under(id)) out.push_back(node(k).name);
  return out;
}

std::vector<int> PriorForest::splits_post_order() const {
  std::vector<int> out;
  std::function<void(int)> rec = [&](int k) {
    const auto& n = node(k);
    if (!n.is_split()) return;
    for (int c : n.children) rec(c);
    out.push_back(k);
  };
  for (int r : roots) rec(r);
  return out;
}

int PriorForest::root_of(int id) const {
  int k = id;
  while (node(k).parent >= 0) k = node(k).parent;
  return k;
}

bool PriorForest::same_structure(const PriorForest& other) const {
  if (nodes.size() != other.nodes.size() || roots.size() != other.roots.size()) return false;
  std::function<bool(int, int)> eq = [&](int a, int b) {
    const auto& x = node(a);
    const auto& y = other.node(b);
    if (x.kind != y.kind || x.name != y.name || x.children.size() != y.children.size()) return false;
    for (size_t i = 0; i < x.children.size(); ++i) {
      if (!eq(x.children[i], y.children[i])) return false;
    }
    return true;
  };
  for (size_t i = 0; i < roots.size(); ++i) {
    if (!eq(roots[i], other.roots[i])) return false;
  }
  return true;
}

namespace {

struct Statement {
  std::string name;  // empty for a singleton
  std::vector<std::string> children;
};

std::vector<Statement> parse_statements(std::string_view s) {
  size_t i = 0;
  auto skip = [&] {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
  };
  auto fail = [&](const std::string& msg) -> void {
    throw Error(ErrorCode::parse_error, "tree string: " + msg + " at position " + std::to_string(i));
  };
  auto ident = [&]() {
    skip();
    const size_t start = i;
    while (i < s.size() && (std::isalnum(static_cast<unsigned char>(s[i])) || s[i] == '_' || s[i] == '.')) ++i;
    if (start == i) fail("expected a name");
    return std::string(s.substr(start, i - start));
  };
  auto expect = [&](char c) {
    skip();
    if (i >= s.size() || s[i] != c) fail(std::string("expected '") + c + "'");
    ++i;
  };

  std::vector<Statement> out;
  while (true) {
    skip();
    if (i >= s.size()) break;
    if (s[i] == ';') {
      ++i;
      continue;
    }
    Statement st;
    if (s[i] != '(') {
      st.name = ident();
      expect('=');
    }
    expect('(');
    st.children.push_back(ident());
    skip();
    while (i < s.size() && s[i] == ',') {
      ++i;
      st.children.push_back(ident());
      skip();
    }
    expect(')');
    skip();
    if (i < s.size() && s[i] != ';') fail("expected ';' between statements");
    out.push_back(std::move(st));
  }
  return out;
}

}  // namespace

PriorForest parse_tree_string(std::string_view text, const ModelSpec& spec,
                              const std::vector<std::string>& reserved) {
  const auto statements = parse_statements(text);
  const auto labels = spec.effect_labels();
  const std::set<std::string> label_set(labels.begin(), labels.end());
  std::set<std::string> reserved_set(reserved.begin(), reserved.end());
  reserved_set.insert(spec.response);
  for (const auto& c : spec.covariates) reserved_set.insert(c);

  PriorForest f;
  std::map<std::string, int> split_ids;
  std::map<std::string, int> leaf_ids;

  // Split names first so that children may refer to splits defined later.
  for (const auto& st : statements) {
    if (st.name.empty()) continue;
    if (label_set.count(st.name) || st.name == kResidualLabel || reserved_set.count(st.name)) {
      throw Error(ErrorCode::name_collision, "split name \"" + st.name + "\" collides with a component or data name");
    }
    if (split_ids.count(st.name)) {
      throw Error(ErrorCode::duplicate_label, "split name \"" + st.name + "\" defined twice");
    }
    if (st.children.size() < 2) {
      throw Error(ErrorCode::invalid_tree, "split \"" + st.name + "\" needs at least two children");
    }
    TreeNode n;
    n.id = static_cast<int>(f.nodes.size());
    n.kind = NodeKind::split;
    n.alias = st.name;
    n.name = st.name;
    split_ids[st.name] = n.id;
    f.nodes.push_back(std::move(n));
  }

  auto leaf_for = [&](const std::string& label) {
    if (!label_set.count(label)) {
      throw Error(ErrorCode::unknown_name, "unknown child \"" + label + "\" in tree string");
    }
    if (leaf_ids.count(label)) {
      throw Error(ErrorCode::duplicate_use, "component \"" + label + "\" used more than once in tree string");
    }
    TreeNode n;
    n.id = static_cast<int>(f.nodes.size());
    n.kind = NodeKind::leaf;
    n.name = label;
    leaf_ids[label] = n.id;
    f.nodes.push_back(std::move(n));
    return leaf_ids[label];
  };

  std::vector<int> singletons;
  for (const auto& st : statements) {
    if (st.name.empty()) {
      if (st.children.size() != 1) {
        throw Error(ErrorCode::invalid_tree, "unnamed statements must hold exactly one component");
      }
      if (split_ids.count(st.children[0])) {
        throw Error(ErrorCode::invalid_tree, "singleton \"(" + st.children[0] + ")\" must name a component");
      }
      const int id = leaf_for(st.children[0]);
      f.node(id).kind = NodeKind::singleton_root;
      singletons.push_back(id);
      continue;
    }
    const int sid = split_ids.at(st.name);
    for (const auto& child : st.children) {
      int cid;
      auto it = split_ids.find(child);
      if (it != split_ids.end()) {
        cid = it->second;
        if (cid == sid) throw Error(ErrorCode::invalid_tree, "split \"" + st.name + "\" contains itself");
        if (f.node(cid).parent >= 0) {
          throw Error(ErrorCode::duplicate_use, "split \"" + child + "\" used more than once");
        }
      } else {
        cid = leaf_for(child);
      }
      f.node(cid).parent = sid;
      f.node(sid).children.push_back(cid);
    }
    f.node(sid).user_children = f.node(sid).children;
  }

  for (const auto& label : labels) {
    if (!leaf_ids.count(label)) {
      throw Error(ErrorCode::missing_component, "component \"" + label + "\" is missing from the tree string");
    }
  }

  // Roots are the unreferenced splits; a cycle leaves a component unreachable.
  for (const auto& [name, id] : split_ids) {
    if (f.node(id).parent < 0) {
      f.node(id).kind = NodeKind::tree_root;
      f.roots.push_back(id);
    }
  }
  for (int s : singletons) f.roots.push_back(s);
  size_t reachable = 0;
  for (int r : f.roots) {
    std::function<void(int)> count = [&](int k) {
      ++reachable;
      for (int c : f.node(k).children) count(c);
    };
    count(r);
  }
  if (reachable != f.nodes.size()) {
    throw Error(ErrorCode::invalid_tree, "tree string contains a cycle");
  }
  return canonicalize(f, spec);
}

PriorForest canonicalize(const PriorForest& forest, const ModelSpec& spec) {
  if (forest.empty()) return forest;
  PriorForest f = forest;

  // Sort children bottom-up and compute canonical names.
  std::map<int, int> first_rank;
  std::function<void(int)> rec = [&](int k) {
    auto& n = f.node(k);
    if (n.children.empty()) {
      first_rank[k] = spec.canonical_rank(n.name);
      return;
    }
    for (int c : n.children) rec(c);
    auto& kids = f.node(k).children;
    std::stable_sort(kids.begin(), kids.end(), [&](int a, int b) {
      const bool la = f.node(a).children.empty();
      const bool lb = f.node(b).children.empty();
      if (la != lb) return la;
      return first_rank[a] < first_rank[b];
    });
    std::string name;
    for (int c : kids) {
      if (!name.empty()) name += "_";
      name += f.node(c).name;
    }
    f.node(k).name = name;
    first_rank[k] = first_rank[kids.front()];
  };
  for (int r : f.roots) rec(r);

  std::vector<int> trees, singles;
  for (int r : f.roots) (f.node(r).children.empty() ? singles : trees).push_back(r);
  std::stable_sort(trees.begin(), trees.end(), [&](int a, int b) { return first_rank[a] < first_rank[b]; });
  std::stable_sort(singles.begin(), singles.end(), [&](int a, int b) { return first_rank[a] < first_rank[b]; });

  // Renumber in root order, pre-order, so equal forests get equal ids.
  std::vector<int> order;
  std::function<void(int)> visit = [&](int k) {
    order.push_back(k);
    for (int c : f.node(k).children) visit(c);
  };
  for (int r : trees) visit(r);
  for (int r : singles) visit(r);
  std::vector<int> remap(f.nodes.size(), -1);
  for (size_t i = 0; i < order.size(); ++i) remap[static_cast<size_t>(order[i])] = static_cast<int>(i);

  PriorForest out;
  out.nodes.resize(order.size());
  for (size_t i = 0; i < order.size(); ++i) {
    TreeNode n = f.node(order[i]);
    n.id = static_cast<int>(i);
    n.parent = n.parent >= 0 ? remap[static_cast<size_t>(n.parent)] : -1;
    for (auto& c : n.children) c = remap[static_cast<size_t>(c)];
    for (auto& c : n.user_children) c = remap[static_cast<size_t>(c)];
    if (n.user_children.empty() && !n.children.empty()) n.user_children = n.children;
    out.nodes[i] = std::move(n);
  }
  for (int r : trees) out.roots.push_back(remap[static_cast<size_t>(r)]);
  for (int r : singles) out.roots.push_back(remap[static_cast<size_t>(r)]);
  return out;
}

std::string render_tree_string(const PriorForest& forest) {
  std::vector<std::string> parts;
  std::function<void(int)> rec = [&](int k) {
    const auto& n = forest.node(k);
    if (n.children.empty()) return;
    for (int c : n.children) rec(c);
    std::string s = n.name + " = (";
    for (size_t i = 0; i < n.children.size(); ++i) {
      if (i) s += ",";
      s += forest.node(n.children[i]).name;
    }
    parts.push_back(s + ")");
  };
  for (int r : forest.roots) {
    if (forest.node(r).children.empty()) {
      parts.push_back("(" + forest.node(r).name + ")");
    } else {
      rec(r);
    }
  }
  std::string out;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (i) out += "; ";
    out += parts[i];
  }
  return out;
}

PriorForest default_forest(const ModelSpec& spec) {
  const auto labels = spec.effect_labels();
  if (labels.empty()) throw Error(ErrorCode::invalid_tree, "model has no random effects");
  PriorForest f;
  if (labels.size() == 1) {
    TreeNode n;
    n.id = 0;
    n.kind = NodeKind::singleton_root;
    n.name = labels[0];
    f.nodes.push_back(n);
    f.roots.push_back(0);
    return f;
  }
  TreeNode root;
  root.id = 0;
  root.kind = NodeKind::tree_root;
  f.nodes.push_back(root);
  for (const auto& l : labels) {
    TreeNode n;
    n.id = static_cast<int>(f.nodes.size());
    n.kind = NodeKind::leaf;
    n.name = l;
    n.parent = 0;
    f.nodes[0].children.push_back(n.id);
    f.nodes.push_back(n);
  }
  f.roots.push_back(0);
  return canonicalize(f, spec);
}

void validate_forest(const PriorForest& forest, const ModelSpec& spec) {
  const auto labels = spec.effect_labels();
  std::map<std::string, int> count;
  for (const auto& n : forest.nodes) {
    if (n.children.empty()) {
      if (!spec.find_component(n.name) && !(n.name == kResidualLabel && spec.has_residual())) {
        throw Error(ErrorCode::unknown_name, "tree leaf \"" + n.name + "\" is not a model component");
      }
      ++count[n.name];
    } else if (n.children.size() < 2) {
      throw Error(ErrorCode::invalid_tree, "split \"" + n.name + "\" needs at least two children");
    }
  }
  for (const auto& l : labels) {
    if (count[l] == 0) throw Error(ErrorCode::missing_component, "component \"" + l + "\" is missing from the tree");
    if (count[l] > 1) throw Error(ErrorCode::duplicate_use, "component \"" + l + "\" used more than once");
  }
  for (int r : forest.roots) {
    if (forest.node(r).parent >= 0) throw Error(ErrorCode::invalid_tree, "root has a parent");
  }
}

}  // namespace priorforest
