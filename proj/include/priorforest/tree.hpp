#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "priorforest/formula.hpp"

namespace priorforest {

enum class NodeKind { leaf, split, singleton_root, tree_root };

struct TreeNode {
  int id = -1;
  NodeKind kind = NodeKind::leaf;
  std::vector<int> children;
  std::string name;
  // Name the user gave the split in the tree string; empty for leaves.
  std::string alias;
  // Children in the order the user listed them. Shrinkage direction of a PC
  // choice made against the alias is interpreted in this order.
  std::vector<int> user_children;
  int parent = -1;

  bool is_split() const { return kind == NodeKind::split || kind == NodeKind::tree_root; }
  bool is_root() const { return parent < 0; }
};

/// Forest of prior trees. Node ids index into `nodes`.
struct PriorForest {
  std::vector<TreeNode> nodes;
  std::vector<int> roots;

  bool empty() const { return nodes.empty(); }
  const TreeNode& node(int id) const { return nodes.at(static_cast<size_t>(id)); }
  TreeNode& node(int id) { return nodes.at(static_cast<size_t>(id)); }

  /// Node whose canonical name or alias equals `name`; -1 when absent.
  int find(std::string_view name) const;

  /// Leaf labels beneath `id` in child order.
  std::vector<std::string> leaves_under(int id) const;
  std::vector<int> leaf_ids_under(int id) const;

  /// Splits in post-order (children before parents), trees in root order.
  std::vector<int> splits_post_order() const;

  /// Root of the tree containing `id`.
  int root_of(int id) const;

  /// Structural equality of canonical names, kinds, children and roots.
  bool same_structure(const PriorForest& other) const;
};

/// Parses statements `name = (child, ...)` and `(label)` separated by `;`.
/// `reserved` holds data column names that split names must not shadow.
PriorForest parse_tree_string(std::string_view text, const ModelSpec& spec,
                              const std::vector<std::string>& reserved = {});

/// Renames splits to the underscore-join of their leaves and orders children:
/// leaves first in formula order (`eps` last), then splits by their first leaf.
PriorForest canonicalize(const PriorForest& forest, const ModelSpec& spec);

/// `a_b = (a,b); eps_a_b = (eps,a_b)`; singletons render as `(a)`.
std::string render_tree_string(const PriorForest& forest);

/// One multi-split over every effect (including `eps`), already canonical.
PriorForest default_forest(const ModelSpec& spec);

/// Checks that every effect label appears exactly once and every split has at
/// least two children. Throws Error on violation.
void validate_forest(const PriorForest& forest, const ModelSpec& spec);

}  // namespace priorforest
