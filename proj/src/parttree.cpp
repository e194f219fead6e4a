#include "pt2pc/parttree.hpp"

#include <algorithm>
#include <functional>
#include <set>

#include <json.hpp>

#include "pt2pc/error.hpp"

namespace pt2pc {

using ordered_json = nlohmann::ordered_json;

SemanticVocab::SemanticVocab(std::string category, std::vector<std::string> labels)
    : category_(std::move(category)), labels_(std::move(labels)) {
  require(!labels_.empty(), ErrorCode::kInvalidArgument, "semantic vocabulary is empty");
  std::set<std::string> seen;
  for (const auto& l : labels_) {
    require(!l.empty(), ErrorCode::kInvalidArgument, "empty semantic label");
    require(seen.insert(l).second, ErrorCode::kInvalidArgument, "duplicate semantic label '" + l + "'");
  }
}

int SemanticVocab::index_of(std::string_view label) const {
  auto it = std::find(labels_.begin(), labels_.end(), label);
  return it == labels_.end() ? -1 : static_cast<int>(it - labels_.begin());
}

const std::string& SemanticVocab::label(int index) const {
  require(index >= 0 && index < size(), ErrorCode::kUnknownLabel,
          "semantic index " + std::to_string(index) + " out of range");
  return labels_[static_cast<std::size_t>(index)];
}

PartTree PartTree::from_nodes(SemanticVocab vocab, int root, std::map<int, PartNode> nodes) {
  require(vocab.size() > 0, ErrorCode::kInvalidArgument, "semantic vocabulary is empty");
  require(nodes.count(root) == 1, ErrorCode::kBadStructure, "root id " + std::to_string(root) + " not present");

  PartTree t;
  bool any_set = false, any_unset = false;
  for (const auto& [id, n] : nodes) {
    require(n.id == id, ErrorCode::kBadStructure, "node key/id mismatch at " + std::to_string(id));
    require(n.sem >= 0 && n.sem < vocab.size(), ErrorCode::kUnknownLabel,
            "node " + std::to_string(id) + " has unknown semantic index " + std::to_string(n.sem));
    require(static_cast<int>(n.children.size()) <= kMaxChildren, ErrorCode::kChildrenOverflow,
            "children overflow: node " + std::to_string(id) + " has " + std::to_string(n.children.size()) +
                " children (max " + std::to_string(kMaxChildren) + ")");
    (n.ordinal == kUnsetOrdinal ? any_unset : any_set) = true;
    for (int c : n.children) {
      require(nodes.count(c) == 1, ErrorCode::kBadStructure,
              "node " + std::to_string(id) + " references missing child " + std::to_string(c));
      require(c != root, ErrorCode::kBadStructure, "cycle: root listed as a child of " + std::to_string(id));
      require(t.parent_.emplace(c, id).second, ErrorCode::kBadStructure,
              "node " + std::to_string(c) + " has more than one parent");
    }
  }

  // Every node reachable from the root; with single parents this also rules out cycles.
  std::set<int> seen;
  std::vector<int> stack{root};
  while (!stack.empty()) {
    int id = stack.back();
    stack.pop_back();
    require(seen.insert(id).second, ErrorCode::kBadStructure, "cycle through node " + std::to_string(id));
    for (int c : nodes.at(id).children) stack.push_back(c);
  }
  require(seen.size() == nodes.size(), ErrorCode::kBadStructure, "tree contains nodes unreachable from root");

  require(!(any_set && any_unset), ErrorCode::kBadStructure, "ordinals must be set on all nodes or on none");
  if (any_set) {
    require(nodes.at(root).ordinal == 0, ErrorCode::kBadStructure, "root ordinal must be 0");
    for (const auto& [id, n] : nodes) {
      std::map<int, std::vector<int>> by_sem;
      for (int c : n.children) {
        const PartNode& child = nodes.at(c);
        require(child.ordinal >= 0 && child.ordinal < kNumOrdinals, ErrorCode::kOrdinalOverflow,
                "node " + std::to_string(c) + " ordinal " + std::to_string(child.ordinal) + " out of range");
        by_sem[child.sem].push_back(child.ordinal);
      }
      for (auto& [sem, ords] : by_sem) {
        std::sort(ords.begin(), ords.end());
        for (std::size_t i = 0; i < ords.size(); ++i)
          require(ords[i] == static_cast<int>(i), ErrorCode::kBadStructure,
                  "ordinals under node " + std::to_string(id) + " are not consecutive from 0");
      }
    }
  }

  t.vocab_ = std::move(vocab);
  t.root_ = root;
  t.nodes_ = std::move(nodes);
  return t;
}

const PartNode& PartTree::node(int id) const {
  auto it = nodes_.find(id);
  require(it != nodes_.end(), ErrorCode::kBadStructure, "no node with id " + std::to_string(id));
  return it->second;
}

int PartTree::parent(int id) const {
  auto it = parent_.find(id);
  return it == parent_.end() ? -1 : it->second;
}

std::vector<int> PartTree::leaves() const {
  std::vector<int> out;
  for (const auto& [id, n] : nodes_)
    if (n.is_leaf()) out.push_back(id);
  return out;
}

std::size_t PartTree::num_leaves() const {
  return static_cast<std::size_t>(
      std::count_if(nodes_.begin(), nodes_.end(), [](const auto& kv) { return kv.second.is_leaf(); }));
}

std::size_t PartTree::subtree_size(int id) const {
  std::size_t n = 1;
  for (int c : node(id).children) n += subtree_size(c);
  return n;
}

bool PartTree::ordinals_set() const {
  return !nodes_.empty() && nodes_.begin()->second.ordinal != kUnsetOrdinal;
}

PartTree canonicalize(const PartTree& tree) {
  std::map<int, PartNode> nodes = tree.nodes();
  nodes.at(tree.root()).ordinal = 0;
  for (auto& [id, n] : nodes) {
    std::map<int, int> next;
    for (int c : n.children) nodes.at(c).ordinal = next[nodes.at(c).sem]++;
  }
  return PartTree::from_nodes(tree.vocab(), tree.root(), std::move(nodes));
}

OneHot onehot(const PartNode& node, const SemanticVocab& vocab) {
  require(node.sem >= 0 && node.sem < vocab.size(), ErrorCode::kUnknownLabel,
          "semantic index " + std::to_string(node.sem) + " out of range");
  require(node.ordinal >= 0 && node.ordinal < kNumOrdinals, ErrorCode::kOrdinalOverflow,
          "ordinal " + std::to_string(node.ordinal) + " out of range");
  OneHot h{std::vector<float>(static_cast<std::size_t>(vocab.size()), 0.0f),
           std::vector<float>(kNumOrdinals, 0.0f)};
  h.sem[static_cast<std::size_t>(node.sem)] = 1.0f;
  h.id[static_cast<std::size_t>(node.ordinal)] = 1.0f;
  return h;
}

std::vector<int> iter_top_down(const PartTree& tree) {
  std::vector<int> order;
  order.reserve(tree.size());
  std::function<void(int)> visit = [&](int id) {
    order.push_back(id);
    for (int c : tree.node(id).children) visit(c);
  };
  visit(tree.root());
  return order;
}

std::vector<int> iter_bottom_up(const PartTree& tree) {
  std::vector<int> pre = iter_top_down(tree);
  std::map<int, int> height;
  for (auto it = pre.rbegin(); it != pre.rend(); ++it) {
    int h = 0;
    for (int c : tree.node(*it).children) h = std::max(h, height.at(c) + 1);
    height[*it] = h;
  }
  std::stable_sort(pre.begin(), pre.end(), [&](int a, int b) { return height.at(a) < height.at(b); });
  return pre;
}

std::string subtree_signature(const PartTree& tree, int id) {
  const PartNode& n = tree.node(id);
  std::vector<std::string> kids;
  for (int c : n.children) kids.push_back(subtree_signature(tree, c));
  std::sort(kids.begin(), kids.end());
  std::string s = std::to_string(n.sem) + "(";
  for (const auto& k : kids) s += k + ",";
  return s + ")";
}

namespace {

void parse_node(const ordered_json& j, const SemanticVocab& vocab, std::map<int, PartNode>& nodes, int& out_id) {
  if (!j.is_object() || !j.contains("id") || !j.contains("sem") || !j.contains("children"))
    fail(ErrorCode::kMalformedJson, "node must be an object with id, sem and children");
  if (!j["id"].is_number_integer() || !j["sem"].is_string() || !j["children"].is_array())
    fail(ErrorCode::kMalformedJson, "node fields have wrong types");
  PartNode n;
  n.id = j["id"].get<int>();
  const auto label = j["sem"].get<std::string>();
  n.sem = vocab.index_of(label);
  require(n.sem >= 0, ErrorCode::kUnknownLabel, "unknown semantic label '" + label + "'");
  const auto& kids = j["children"];
  require(static_cast<int>(kids.size()) <= kMaxChildren, ErrorCode::kChildrenOverflow,
          "children overflow: node " + std::to_string(n.id) + " has " + std::to_string(kids.size()) +
              " children (max " + std::to_string(kMaxChildren) + ")");
  for (const auto& k : kids) {
    int cid = 0;
    parse_node(k, vocab, nodes, cid);
    n.children.push_back(cid);
  }
  require(nodes.count(n.id) == 0, ErrorCode::kBadStructure,
          "node id " + std::to_string(n.id) + " appears more than once (cycle or multiple parents)");
  out_id = n.id;
  nodes.emplace(n.id, std::move(n));
}

ordered_json dump_node(const PartTree& tree, int id) {
  const PartNode& n = tree.node(id);
  ordered_json j;
  j["id"] = n.id;
  j["sem"] = tree.vocab().label(n.sem);
  j["children"] = ordered_json::array();
  for (int c : n.children) j["children"].push_back(dump_node(tree, c));
  return j;
}

PartTree parse_impl(std::string_view text, const SemanticVocab* expected) {
  ordered_json j;
  try {
    j = ordered_json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kMalformedJson, std::string("tree JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("category") || !j.contains("semantics") || !j.contains("root"))
    fail(ErrorCode::kMalformedJson, "tree JSON must have category, semantics and root");
  if (!j["category"].is_string() || !j["semantics"].is_array())
    fail(ErrorCode::kMalformedJson, "category must be a string and semantics an array");
  std::vector<std::string> labels;
  for (const auto& l : j["semantics"]) {
    if (!l.is_string()) fail(ErrorCode::kMalformedJson, "semantic labels must be strings");
    labels.push_back(l.get<std::string>());
  }
  SemanticVocab vocab;
  try {
    vocab = SemanticVocab(j["category"].get<std::string>(), std::move(labels));
  } catch (const Error& e) {
    fail(ErrorCode::kMalformedJson, e.what());
  }
  if (expected && !(vocab == *expected))
    fail(ErrorCode::kVocabMismatch, "tree vocabulary does not match the expected vocabulary");

  std::map<int, PartNode> nodes;
  int root = 0;
  parse_node(j["root"], vocab, nodes, root);
  return canonicalize(PartTree::from_nodes(std::move(vocab), root, std::move(nodes)));
}

}  // namespace

PartTree parse_tree(std::string_view text) { return parse_impl(text, nullptr); }

PartTree parse_tree(std::string_view text, const SemanticVocab& expected) { return parse_impl(text, &expected); }

std::string serialize_tree(const PartTree& tree) {
  ordered_json j;
  j["category"] = tree.vocab().category();
  j["semantics"] = tree.vocab().labels();
  j["root"] = dump_node(tree, tree.root());
  return j.dump(2) + "\n";
}

}  // namespace pt2pc
