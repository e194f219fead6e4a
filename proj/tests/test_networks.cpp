#include <gtest/gtest.h>

#include "gradcheck.hpp"

using namespace pt2pc;
using namespace testing_util;
using namespace gradcheck;

TEST(Gradients, Generator) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const NetCheck c = generator_check(seed);
    EXPECT_LT(c.value_err, 1e-5);
    EXPECT_LT(c.grad_err, 1e-3);
  }
}

TEST(Gradients, Discriminator) {
  for (std::uint64_t seed : {1, 2}) {
    for (auto [st, wh] : {std::pair{true, true}, std::pair{true, false}, std::pair{false, true}}) {
      const NetCheck c = discriminator_check(seed, st, wh);
      EXPECT_LT(c.value_err, 1e-5) << st << wh;
      EXPECT_LT(c.grad_err, 1e-3) << st << wh;
    }
  }
}

TEST(Gradients, Penalty) {
  const PenaltyCheck c = penalty_check(7);
  EXPECT_LT(c.value_err, 1e-4);
  EXPECT_LT(c.fd_norm_err, 1e-2);
  EXPECT_LT(c.param_grad_err, 1e-3);
}

#include "invariance.hpp"

namespace {

Tensor sem_id(const PartTree& t, int id) {
  const OneHot h = onehot(t.node(id), t.vocab());
  std::vector<float> v = h.sem;
  v.insert(v.end(), h.id.begin(), h.id.end());
  return Tensor::row(v);
}

void zero(Linear& l) {
  for (float& v : l.weight.mutable_values()) v = 0;
}

}  // namespace

TEST(Invariance, Generator) { EXPECT_EQ(invariance::generator_child_permutation(20, 1), 0); }
TEST(Invariance, DiscriminatorChildren) { EXPECT_EQ(invariance::discriminator_child_permutation(20, 2), 0); }
TEST(Invariance, DiscriminatorPoints) { EXPECT_EQ(invariance::discriminator_point_permutation(20, 3), 0); }
TEST(Invariance, MaxPool) { EXPECT_EQ(invariance::maxpool_permutation(50, 4), 0); }

TEST(Generator, SingleLeafRootPoolsOneChild) {
  const auto s = tiny_setup(1);
  const PartTree t = make_tree(chair_vocab(), {{0, "chair", {1}}, {1, "chair_seat", {}}});
  NoGradScope ng;
  const NodeTensors enc = encode_template(t, s.g, s.gcfg);
  const Tensor row = concat({Tensor::zeros(1, 8), sem_id(t, 1)}, 1);
  const Tensor want = leaky_relu(s.g.enc_post(leaky_relu(s.g.enc_embed(row), kLeakySlope)), kLeakySlope);
  EXPECT_EQ(to_vec(enc.at(0)), to_vec(want));
  EXPECT_EQ(to_vec(enc.at(1)), std::vector<float>(8, 0.0f));
}

TEST(Generator, StructureChangesRootCode) {
  const auto s = tiny_setup(2);
  // same leaf multiset {seat, leg, leg}, different nesting
  const PartTree a = chair3leaf();
  const PartTree b = make_tree(chair_vocab(), {{0, "chair", {1, 2, 3}}, {1, "chair_seat", {}}, {2, "leg", {}},
                                               {3, "leg", {}}});
  NoGradScope ng;
  EXPECT_NE(to_vec(encode_template(a, s.g, s.gcfg).at(0)), to_vec(encode_template(b, s.g, s.gcfg).at(0)));
}

TEST(Generator, DecodeFeatures) {
  const auto s = tiny_setup(3);
  const PartTree t = make_tree(chair_vocab(), {{0, "chair", {1, 2}}, {1, "chair_seat", {}}, {2, "chair_back", {}}});
  std::mt19937_64 rng(3);
  NoGradScope ng;
  const Tensor z = sample_latent(8, rng);
  const NodeTensors enc = encode_template(t, s.g, s.gcfg);
  const NodeTensors f = decode_features(t, enc, z, s.g, s.gcfg);
  // leaves see z only through f^root
  for (int leaf : {1, 2}) {
    const Tensor x = concat({f.at(0), enc.at(leaf), sem_id(t, leaf)}, 1);
    const Tensor want = leaky_relu(s.g.dec2(leaky_relu(s.g.dec1(x), kLeakySlope)), kLeakySlope);
    EXPECT_EQ(to_vec(f.at(leaf)), to_vec(want));
  }
  const NodeTensors again = decode_features(t, enc, z, s.g, s.gcfg);
  for (const auto& [id, v] : f) EXPECT_EQ(to_vec(v), to_vec(again.at(id)));
  const Tensor z2 = add_scalar(z, 0.5f);
  const NodeTensors moved = decode_features(t, enc, z2, s.g, s.gcfg);
  for (const auto& [id, v] : f) EXPECT_NE(to_vec(v), to_vec(moved.at(id)));
}

TEST(Generator, DecodePartPc) {
  GeneratorConfig cfg;
  cfg.num_sem = 6;
  cfg.feat = cfg.z_dim = 16;
  cfg.pc_hidden = 32;
  cfg.points_per_part = 1000;
  GeneratorParams p = init_generator(cfg, 5);
  std::mt19937_64 rng(5);
  NoGradScope ng;
  const Tensor f = sample_latent(16, rng);
  const Tensor a = decode_part_pc(f, p, p.cube);
  EXPECT_EQ(a.shape(), (std::vector<int>{1000, 3}));
  EXPECT_EQ(to_vec(a), to_vec(decode_part_pc(f, p, p.cube)));
  for (Linear* l : {&p.pc1, &p.pc2, &p.pc3}) zero(*l);
  p.pc3.bias.mutable_values()[0] = 0.25f;
  p.pc3.bias.mutable_values()[1] = -1.0f;
  p.pc3.bias.mutable_values()[2] = 3.0f;
  const Tensor c = decode_part_pc(f, p, p.cube);
  for (int i = 0; i < 1000; ++i) {
    EXPECT_EQ(c.at(i, 0), 0.25f);
    EXPECT_EQ(c.at(i, 1), -1.0f);
    EXPECT_EQ(c.at(i, 2), 3.0f);
  }
}

TEST(Generator, GenerateShapes) {
  GeneratorConfig cfg;
  cfg.num_sem = 6;
  cfg.feat = cfg.z_dim = 16;
  cfg.pc_hidden = 16;
  cfg.points_per_part = 1000;
  cfg.shape_points = 2048;
  const GeneratorParams p = init_generator(cfg, 6);
  std::mt19937_64 rng(6);
  const Tensor z = sample_latent(16, rng);

  const PartTree four = make_tree(chair_vocab(), {{0, "chair", {1, 2, 3, 4}}, {1, "chair_seat", {}},
                                                  {2, "chair_back", {}}, {3, "leg", {}}, {4, "leg", {}}});
  const GeneratedShape g = generate(four, z, p, cfg);
  ASSERT_EQ(g.parts.size(), 4u);
  for (const auto& [id, pc] : g.parts) EXPECT_EQ(pc.size(), 1000u);
  ASSERT_EQ(g.shape.size(), 2048u);
  std::map<std::array<float, 3>, int> owner;
  for (const auto& [id, pc] : g.parts)
    for (std::size_t i = 0; i < pc.size(); ++i) owner[pc.point(i)] += 1;
  for (std::size_t i = 0; i < g.shape.size(); ++i) {
    auto it = owner.find(g.shape.point(i));
    ASSERT_NE(it, owner.end());
    EXPECT_EQ(it->second, 1);
  }

  const PartTree chair = chair8();
  EXPECT_EQ(union_cloud(generate(chair, z, p, cfg).parts).size(), 6000u);

  const GeneratedShape again = generate(four, z, p, cfg);
  EXPECT_EQ(again.parts, g.parts);
  EXPECT_EQ(again.shape, g.shape);

  const PartTree small = make_tree(chair_vocab(), {{0, "chair", {1}}, {1, "chair_seat", {}}});
  EXPECT_CODE(generate(small, z, p, cfg), ErrorCode::kInsufficientPoints);
}

TEST(Generator, Mesh) {
  const auto s = tiny_setup(7);
  const TriMesh cube = unit_cube_mesh(3);
  EXPECT_EQ(cube.vertices.size(), 6u * 9 + 2);
  EXPECT_EQ(cube.faces.size(), 12u * 9);
  std::mt19937_64 rng(7);
  const Tensor z = sample_latent(8, rng);
  const auto meshes = generate_mesh(s.tree, z, s.g, s.gcfg, 3);
  ASSERT_EQ(meshes.size(), s.tree.num_leaves());

  // decode the mesh vertices directly as a point sample
  std::vector<float> flat;
  for (const auto& v : cube.vertices) flat.insert(flat.end(), v.begin(), v.end());
  NoGradScope ng;
  const NodeTensors f = decode_features(s.tree, encode_template(s.tree, s.g, s.gcfg), z, s.g, s.gcfg);
  for (const auto& [leaf, m] : meshes) {
    EXPECT_EQ(m.vertices.size(), cube.vertices.size());
    EXPECT_EQ(m.faces, cube.faces);
    const Tensor pts =
        decode_part_pc(f.at(leaf), s.g, Tensor::from(static_cast<int>(cube.vertices.size()), 3, flat));
    for (std::size_t i = 0; i < m.vertices.size(); ++i)
      for (int c = 0; c < 3; ++c) EXPECT_EQ(m.vertices[i][static_cast<std::size_t>(c)], pts.at(static_cast<int>(i), c));
  }

  auto zeroed = tiny_setup(7);
  for (Linear* l : {&zeroed.g.pc1, &zeroed.g.pc2, &zeroed.g.pc3}) zero(*l);
  for (const auto& [leaf, m] : generate_mesh(zeroed.tree, z, zeroed.g, zeroed.gcfg, 3))
    for (const auto& v : m.vertices)
      for (int c = 0; c < 3; ++c)
        EXPECT_EQ(v[static_cast<std::size_t>(c)], zeroed.g.pc3.bias.values()[static_cast<std::size_t>(c)]);

  const std::string obj = encode_obj(cube);
  EXPECT_EQ(obj.rfind("v ", 0), 0u);
  EXPECT_EQ(std::count(obj.begin(), obj.end(), '\n'), static_cast<long>(cube.vertices.size() + cube.faces.size()));
}

TEST(Discriminator, PointFeatures) {
  const auto s = tiny_setup(8);
  NoGradScope ng;
  const Tensor one = Tensor::from(1, 3, {0.1f, -0.2f, 0.3f});
  Tensor h = one;
  for (const Linear& l : s.d.part_pc) h = leaky_relu(l(h), kLeakySlope);
  EXPECT_EQ(to_vec(encode_part(one, s.d)), to_vec(h));

  std::mt19937_64 rng(8);
  const PointCloud pc = random_cloud(16, rng);
  const Tensor x = Tensor::from(16, 3, pc.raw());
  const Tensor xx = concat({x, x}, 0);
  EXPECT_EQ(to_vec(encode_part(xx, s.d)), to_vec(encode_part(x, s.d)));
  const PointCloud perm = permute_points(pc, rng);
  EXPECT_EQ(to_vec(encode_part(Tensor::from(16, 3, perm.raw()), s.d)), to_vec(encode_part(x, s.d)));
}

TEST(Discriminator, EncodeTree) {
  const auto s = tiny_setup(9);
  NoGradScope ng;
  std::mt19937_64 rng(9);
  const PartTree single = make_tree(chair_vocab(), {{0, "chair", {1}}, {1, "chair_seat", {}}});
  const Tensor h1 = Tensor::from(1, 8, gradcheck::draw(8, gradcheck::Domain::kAny, rng));
  const Tensor leaf = leaky_relu(s.d.leaf_proj(h1), kLeakySlope);
  const Tensor row = concat({leaf, Tensor::row(onehot(single.node(1), single.vocab()).sem)}, 1);
  const Tensor want = leaky_relu(s.d.tree_post(leaky_relu(s.d.tree_embed(row), kLeakySlope)), kLeakySlope);
  EXPECT_EQ(to_vec(encode_tree(single, {{1, h1}}, s.d)), to_vec(want));

  const PartTree t = chair8();
  NodeTensors hs;
  for (int l : t.leaves()) hs[l] = Tensor::from(1, 8, gradcheck::draw(8, gradcheck::Domain::kAny, rng));
  const auto base = to_vec(encode_tree(t, hs, s.d));
  EXPECT_EQ(to_vec(encode_tree(reverse_children(t), hs, s.d)), base);
  NodeTensors swapped = hs;
  std::swap(swapped[4], swapped[6]);
  EXPECT_EQ(to_vec(encode_tree(t, swapped, s.d)), base);
}

TEST(Discriminator, Heads) {
  auto s = tiny_setup(10);
  std::mt19937_64 rng(10);
  const PartCloudSet x = random_parts(s.tree, 16, rng);
  const ScoreValues both = discriminate(x, s.tree, s.d, s.dcfg);
  EXPECT_EQ(both.y, both.y_struct + both.y_whole);

  auto cfg = s.dcfg;
  cfg.use_struct = false;
  const ScoreValues w = discriminate(x, s.tree, s.d, cfg);
  EXPECT_EQ(w.y_struct, 0.0f);
  EXPECT_EQ(w.y, w.y_whole);
  EXPECT_EQ(w.y_whole, both.y_whole);
  cfg.use_struct = true;
  cfg.use_whole = false;
  const ScoreValues st = discriminate(x, s.tree, s.d, cfg);
  EXPECT_EQ(st.y_whole, 0.0f);
  EXPECT_EQ(st.y, st.y_struct);

  // default init has zero biases; the tiny setup jitters them
  for (Linear* l : {&s.d.struct_score, &s.d.whole_score}) {
    zero(*l);
    l->bias.mutable_values()[0] = 0;
  }
  const ScoreValues z = discriminate(x, s.tree, s.d, s.dcfg);
  EXPECT_EQ(z.y, 0.0f);
  cfg.use_struct = cfg.use_whole = false;
  EXPECT_CODE(cfg.validate(), ErrorCode::kInvalidArgument);
}

TEST(Discriminator, LeafMismatch) {
  const auto s = tiny_setup(11);
  std::mt19937_64 rng(11);
  PartCloudSet x = random_parts(s.tree, 16, rng);
  x.erase(x.begin());
  EXPECT_CODE(discriminate(x, s.tree, s.d, s.dcfg), ErrorCode::kLeafMismatch);
}

TEST(Model, CheckpointRoundTrip) {
  TrainConfig cfg = default_train_config(6);
  cfg.gen.feat = cfg.gen.z_dim = 8;
  cfg.gen.pc_hidden = 8;
  cfg.gen.points_per_part = 16;
  cfg.gen.shape_points = 24;
  cfg.disc.pc_widths = {4, 4, 4, 4};
  cfg.disc.tree_feat = 8;
  cfg.disc.shape_points = 24;
  cfg.disc.use_whole = false;
  ModelParams m = init_model(chair_vocab(), cfg);
  m.step = 42;
  const std::string bytes = encode_checkpoint(m.to_checkpoint({{"note", "x"}}));
  const ModelParams back = ModelParams::from_checkpoint(decode_checkpoint(bytes));
  EXPECT_EQ(back.vocab, m.vocab);
  EXPECT_EQ(back.gen_cfg, m.gen_cfg);
  EXPECT_EQ(back.disc_cfg, m.disc_cfg);
  EXPECT_EQ(back.step, 42);
  EXPECT_EQ(encode_checkpoint(back.to_checkpoint({{"note", "x"}})), bytes);
  EXPECT_EQ(to_vec(back.gen.cube), to_vec(m.gen.cube));

  Checkpoint other;
  other.config = {{"format", "something-else"}};
  EXPECT_CODE(ModelParams::from_checkpoint(other), ErrorCode::kBadCheckpoint);
}
