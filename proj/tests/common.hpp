#pragma once

// Small builders shared by the unit tests and the acceptance runner.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "pt2pc/error.hpp"
#include "pt2pc/generator.hpp"
#include "pt2pc/parttree.hpp"
#include "pt2pc/pcops.hpp"
#include "pt2pc/tensor.hpp"

namespace testing_util {

using namespace pt2pc;

inline SemanticVocab chair_vocab() {
  return SemanticVocab("chair", {"chair", "chair_seat", "chair_back", "chair_base", "leg", "bar"});
}

struct NodeSpec {
  int id;
  std::string sem;
  std::vector<int> children;
};

/// Tree from (id, label, children) triples; the first entry is the root.
inline PartTree make_tree(const SemanticVocab& vocab, const std::vector<NodeSpec>& specs) {
  std::map<int, PartNode> nodes;
  for (const auto& s : specs) {
    PartNode n;
    n.id = s.id;
    n.sem = vocab.index_of(s.sem);
    n.children = s.children;
    nodes.emplace(s.id, n);
  }
  return canonicalize(PartTree::from_nodes(vocab, specs.front().id, std::move(nodes)));
}

/// chair -> {seat, back, base -> {leg x4}}: 8 nodes, 6 leaves.
inline PartTree chair8() {
  return make_tree(chair_vocab(), {{0, "chair", {1, 2, 3}},
                                   {1, "chair_seat", {}},
                                   {2, "chair_back", {}},
                                   {3, "chair_base", {4, 5, 6, 7}},
                                   {4, "leg", {}},
                                   {5, "leg", {}},
                                   {6, "leg", {}},
                                   {7, "leg", {}}});
}

/// chair -> {seat, base -> {leg, leg}}: 5 nodes, 3 leaves.
inline PartTree chair3leaf() {
  return make_tree(chair_vocab(), {{0, "chair", {1, 2}}, {1, "chair_seat", {}}, {2, "chair_base", {3, 4}},
                                   {3, "leg", {}}, {4, "leg", {}}});
}

/// Same tree with every children list reversed (ordinals recomputed, so
/// the legs swap ordinals unless `keep_ordinals`).
inline PartTree reverse_children(const PartTree& t, bool keep_ordinals = true) {
  std::map<int, PartNode> nodes = t.nodes();
  for (auto& [id, n] : nodes) std::reverse(n.children.begin(), n.children.end());
  if (!keep_ordinals) {
    for (auto& [id, n] : nodes) n.ordinal = kUnsetOrdinal;
    return canonicalize(PartTree::from_nodes(t.vocab(), t.root(), std::move(nodes)));
  }
  return PartTree::from_nodes(t.vocab(), t.root(), std::move(nodes));
}

/// Random permutation of every children list, ordinals kept on the nodes.
inline PartTree shuffle_children(const PartTree& t, std::mt19937_64& rng) {
  std::map<int, PartNode> nodes = t.nodes();
  for (auto& [id, n] : nodes) std::shuffle(n.children.begin(), n.children.end(), rng);
  return PartTree::from_nodes(t.vocab(), t.root(), std::move(nodes));
}

/// Random tree with exactly `n_nodes` nodes over a small vocabulary.
inline PartTree random_tree(const SemanticVocab& vocab, int n_nodes, std::mt19937_64& rng, int max_sem = -1) {
  const int S = max_sem > 0 ? std::min(max_sem, vocab.size()) : vocab.size();
  std::map<int, PartNode> nodes;
  std::uniform_int_distribution<int> sem(0, S - 1);
  nodes[0] = PartNode{0, sem(rng), kUnsetOrdinal, {}};
  for (int id = 1; id < n_nodes; ++id) {
    int parent;
    do {
      parent = std::uniform_int_distribution<int>(0, id - 1)(rng);
    } while (static_cast<int>(nodes[parent].children.size()) >= kMaxChildren);
    nodes[parent].children.push_back(id);
    nodes[id] = PartNode{id, sem(rng), kUnsetOrdinal, {}};
  }
  return canonicalize(PartTree::from_nodes(vocab, 0, std::move(nodes)));
}

inline PointCloud random_cloud(std::size_t n, std::mt19937_64& rng, float lo = -0.5f, float hi = 0.5f) {
  std::uniform_real_distribution<float> u(lo, hi);
  std::vector<float> xyz(3 * n);
  for (float& v : xyz) v = u(rng);
  return PointCloud(std::move(xyz));
}

inline PartCloudSet random_parts(const PartTree& t, std::size_t m, std::mt19937_64& rng) {
  PartCloudSet out;
  for (int leaf : t.leaves()) out[leaf] = random_cloud(m, rng);
  return out;
}

inline PointCloud permute_points(const PointCloud& pc, std::mt19937_64& rng) {
  std::vector<int> idx(pc.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  std::shuffle(idx.begin(), idx.end(), rng);
  return gather(pc, idx);
}

inline std::vector<float> to_vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("pt2pc_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testing_util

#define EXPECT_CODE(stmt, want)                                       \
  do {                                                                \
    try {                                                             \
      stmt;                                                           \
      ADD_FAILURE() << "expected error " #want " from " #stmt;        \
    } catch (const ::pt2pc::Error& e) {                               \
      EXPECT_EQ(e.code(), want) << e.what();                          \
    }                                                                 \
  } while (0)
