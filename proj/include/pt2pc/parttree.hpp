#pragma once

// Symbolic part trees: a hierarchy of part instances carrying a semantic
// label and a sibling ordinal, with no geometry attached.

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace pt2pc {

inline constexpr int kMaxChildren = 10;
inline constexpr int kNumOrdinals = 10;
inline constexpr int kUnsetOrdinal = -1;

/// Ordered label set of one object category. Label indices are stable.
class SemanticVocab {
 public:
  SemanticVocab() = default;
  SemanticVocab(std::string category, std::vector<std::string> labels);

  const std::string& category() const { return category_; }
  const std::vector<std::string>& labels() const { return labels_; }
  int size() const { return static_cast<int>(labels_.size()); }

  /// Index of `label`, or -1 when absent.
  int index_of(std::string_view label) const;
  const std::string& label(int index) const;

  bool operator==(const SemanticVocab&) const = default;

 private:
  std::string category_;
  std::vector<std::string> labels_;
};

struct PartNode {
  int id = 0;
  int sem = 0;
  int ordinal = kUnsetOrdinal;
  std::vector<int> children;

  bool is_leaf() const { return children.empty(); }
  bool operator==(const PartNode&) const = default;
};

class PartTree {
 public:
  PartTree() = default;

  /// Validates and builds a tree from explicit nodes. Ordinals may be unset
  /// (kUnsetOrdinal) on every node, or set on every node; set ordinals must
  /// be a valid assignment (distinct and consecutive per parent and label).
  static PartTree from_nodes(SemanticVocab vocab, int root, std::map<int, PartNode> nodes);

  const SemanticVocab& vocab() const { return vocab_; }
  int root() const { return root_; }
  const std::map<int, PartNode>& nodes() const { return nodes_; }
  const PartNode& node(int id) const;
  bool contains(int id) const { return nodes_.count(id) != 0; }
  std::size_t size() const { return nodes_.size(); }

  /// -1 for the root.
  int parent(int id) const;
  /// Leaf ids in ascending order.
  std::vector<int> leaves() const;
  std::size_t num_leaves() const;
  /// Number of nodes in the subtree rooted at `id`, including `id`.
  std::size_t subtree_size(int id) const;
  bool ordinals_set() const;

  bool operator==(const PartTree& other) const {
    return vocab_ == other.vocab_ && root_ == other.root_ && nodes_ == other.nodes_;
  }

 private:
  SemanticVocab vocab_;
  int root_ = 0;
  std::map<int, PartNode> nodes_;
  std::map<int, int> parent_;
};

/// Parses the `tree.json` format. The result is canonicalized.
PartTree parse_tree(std::string_view text);
/// Parses with an externally fixed vocabulary; the file's semantics list
/// must match it exactly.
PartTree parse_tree(std::string_view text, const SemanticVocab& expected);
std::string serialize_tree(const PartTree& tree);

/// Assigns ordinals per parent and per semantic label, in child order.
PartTree canonicalize(const PartTree& tree);

struct OneHot {
  std::vector<float> sem;
  std::vector<float> id;
};
OneHot onehot(const PartNode& node, const SemanticVocab& vocab);

/// Every node appears after all of its children. Nodes are grouped by
/// height (leaves first) and ordered by preorder position within a height.
std::vector<int> iter_bottom_up(const PartTree& tree);
/// Preorder: every node appears before its children.
std::vector<int> iter_top_down(const PartTree& tree);

/// Canonical string describing the labeled shape of a subtree, ignoring ids
/// and child order. Equal signatures mean isomorphic labeled subtrees.
std::string subtree_signature(const PartTree& tree, int id);

}  // namespace pt2pc
