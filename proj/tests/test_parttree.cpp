#include <gtest/gtest.h>

#include <random>

#include "common.hpp"
#include "pt2pc/error.hpp"
#include "pt2pc/parttree.hpp"

using namespace pt2pc;
using namespace testing_util;

namespace {

std::string tree_json(const std::string& root) {
  return R"({"category":"chair","semantics":["chair","chair_seat","chair_back","chair_base","leg","bar"],"root":)" +
         root + "}";
}

std::string leaf(int id, const std::string& sem) {
  return R"({"id":)" + std::to_string(id) + R"(,"sem":")" + sem + R"(","children":[]})";
}

std::size_t pos(const std::vector<int>& order, int id) {
  return static_cast<std::size_t>(std::find(order.begin(), order.end(), id) - order.begin());
}

}  // namespace

TEST(PartTree, MinimalFile) {
  const PartTree t = parse_tree(tree_json(R"({"id":0,"sem":"chair","children":[)" + leaf(1, "chair_seat") + "]}"));
  EXPECT_EQ(t.size(), 2u);
  EXPECT_EQ(t.leaves(), std::vector<int>{1});
  EXPECT_EQ(t.vocab().label(t.node(1).sem), "chair_seat");
}

TEST(PartTree, ChairCounts) {
  const PartTree t = chair8();
  EXPECT_EQ(t.size(), 8u);
  EXPECT_EQ(t.num_leaves(), 6u);
  EXPECT_EQ(t.subtree_size(3), 5u);
}

TEST(PartTree, ChildrenOverflow) {
  std::string kids;
  for (int i = 1; i <= 11; ++i) kids += (i > 1 ? "," : "") + leaf(i, "leg");
  EXPECT_CODE(parse_tree(tree_json(R"({"id":0,"sem":"chair","children":[)" + kids + "]}")),
              ErrorCode::kChildrenOverflow);
  // ten is fine
  kids.clear();
  for (int i = 1; i <= 10; ++i) kids += (i > 1 ? "," : "") + leaf(i, "leg");
  EXPECT_EQ(parse_tree(tree_json(R"({"id":0,"sem":"chair","children":[)" + kids + "]}")).size(), 11u);
}

TEST(PartTree, BadInputs) {
  EXPECT_CODE(parse_tree("{not json"), ErrorCode::kMalformedJson);
  EXPECT_CODE(parse_tree(tree_json(R"({"id":0,"sem":"sofa","children":[]})")), ErrorCode::kUnknownLabel);
  EXPECT_CODE(parse_tree(tree_json(R"({"id":0,"sem":"chair","children":[)" + leaf(0, "leg") + "]}")),
              ErrorCode::kBadStructure);
  EXPECT_CODE(parse_tree(tree_json(R"({"id":0,"sem":"chair"})")), ErrorCode::kMalformedJson);
}

TEST(PartTree, CanonicalOrdinals) {
  const PartTree t = chair8();
  for (int i = 0; i < 4; ++i) EXPECT_EQ(t.node(4 + i).ordinal, i);
  const PartTree mixed = make_tree(chair_vocab(), {{0, "chair_base", {1, 2, 3}}, {1, "leg", {}}, {2, "bar", {}},
                                                   {3, "leg", {}}});
  EXPECT_EQ(mixed.node(1).ordinal, 0);
  EXPECT_EQ(mixed.node(2).ordinal, 0);
  EXPECT_EQ(mixed.node(3).ordinal, 1);
  EXPECT_EQ(mixed.node(0).ordinal, 0);
}

TEST(PartTree, CanonicalizeIdempotentAndKeepsEdges) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const PartTree t = random_tree(chair_vocab(), 2 + trial % 9, rng);
    const PartTree c = canonicalize(t);
    EXPECT_EQ(canonicalize(c), c);
    for (const auto& [id, n] : t.nodes()) EXPECT_EQ(c.node(id).children, n.children);
  }
}

TEST(PartTree, OneHot) {
  const SemanticVocab v("x", {"a", "b", "c", "d", "e"});
  PartNode n{0, 2, 0, {}};
  const OneHot oh = onehot(n, v);
  EXPECT_EQ(oh.sem, (std::vector<float>{0, 0, 1, 0, 0}));
  std::vector<float> id(10, 0.0f);
  id[0] = 1;
  EXPECT_EQ(oh.id, id);

  const PartTree t = chair8();
  for (const auto& [nid, node] : t.nodes()) {
    const OneHot o = onehot(node, t.vocab());
    float s1 = 0, s2 = 0;
    for (float x : o.sem) s1 += x;
    for (float x : o.id) s2 += x;
    EXPECT_EQ(s1, 1.0f);
    EXPECT_EQ(s2, 1.0f);
  }
  const OneHot l0 = onehot(t.node(4), t.vocab()), l1 = onehot(t.node(5), t.vocab());
  EXPECT_EQ(l0.sem, l1.sem);
  EXPECT_NE(l0.id, l1.id);
}

TEST(PartTree, Traversals) {
  const PartTree chain = make_tree(chair_vocab(), {{0, "chair", {1}}, {1, "chair_base", {2}}, {2, "leg", {}}});
  EXPECT_EQ(iter_bottom_up(chain), (std::vector<int>{2, 1, 0}));
  EXPECT_EQ(iter_top_down(chain), (std::vector<int>{0, 1, 2}));

  const PartTree t = chair8();
  const auto up = iter_bottom_up(t);
  EXPECT_EQ(up, (std::vector<int>{1, 2, 4, 5, 6, 7, 3, 0}));
  const auto down = iter_top_down(t);
  EXPECT_EQ(down.front(), 0);
  std::vector<int> rev(up.rbegin(), up.rend());
  for (const auto& [id, n] : t.nodes())
    for (int c : n.children) {
      EXPECT_LT(pos(up, c), pos(up, id));
      EXPECT_LT(pos(down, id), pos(down, c));
      EXPECT_LT(pos(rev, id), pos(rev, c));
    }
}

TEST(PartTree, JsonRoundTrip) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    const PartTree t = random_tree(chair_vocab(), 1 + trial % 12, rng);
    const std::string s = serialize_tree(t);
    const PartTree back = parse_tree(s);
    EXPECT_EQ(back, t);
    EXPECT_EQ(serialize_tree(back), s);
  }
}

TEST(PartTree, ExpectedVocab) {
  const std::string s = serialize_tree(chair8());
  EXPECT_EQ(parse_tree(s, chair_vocab()), chair8());
  EXPECT_CODE(parse_tree(s, SemanticVocab("chair", {"chair", "leg"})), ErrorCode::kVocabMismatch);
}

TEST(PartTree, Signature) {
  const PartTree t = chair8();
  EXPECT_EQ(subtree_signature(t, 4), subtree_signature(t, 7));
  EXPECT_NE(subtree_signature(t, 1), subtree_signature(t, 2));
  EXPECT_EQ(subtree_signature(reverse_children(t, false), 0), subtree_signature(t, 0));
}
