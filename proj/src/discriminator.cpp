#include "pt2pc/discriminator.hpp"

#include "pt2pc/error.hpp"

namespace pt2pc {

void DiscriminatorConfig::validate() const {
  require(num_sem >= 1, ErrorCode::kInvalidArgument, "discriminator: vocabulary size must be >= 1");
  for (int w : pc_widths) require(w >= 1, ErrorCode::kInvalidArgument, "discriminator: widths must be positive");
  require(tree_feat >= 1 && shape_points >= 1, ErrorCode::kInvalidArgument, "discriminator: widths must be positive");
  require(use_struct || use_whole, ErrorCode::kInvalidArgument, "cannot disable both discriminator heads");
}

nlohmann::json DiscriminatorConfig::to_json() const {
  return {{"num_sem", num_sem},     {"pc_widths", pc_widths}, {"tree_feat", tree_feat},
          {"shape_points", shape_points}, {"use_struct", use_struct}, {"use_whole", use_whole}};
}

DiscriminatorConfig DiscriminatorConfig::from_json(const nlohmann::json& j) {
  DiscriminatorConfig c;
  c.num_sem = j.at("num_sem").get<int>();
  c.pc_widths = j.at("pc_widths").get<std::array<int, 4>>();
  c.tree_feat = j.at("tree_feat").get<int>();
  c.shape_points = j.at("shape_points").get<int>();
  c.use_struct = j.at("use_struct").get<bool>();
  c.use_whole = j.at("use_whole").get<bool>();
  c.validate();
  return c;
}

namespace {

std::vector<std::pair<std::string, const Linear*>> layer_list(const DiscriminatorParams& p) {
  std::vector<std::pair<std::string, const Linear*>> out;
  for (int i = 0; i < 4; ++i) out.emplace_back("part_pc" + std::to_string(i), &p.part_pc[i]);
  out.emplace_back("leaf_proj", &p.leaf_proj);
  out.emplace_back("tree_embed", &p.tree_embed);
  out.emplace_back("tree_post", &p.tree_post);
  out.emplace_back("struct_score", &p.struct_score);
  for (int i = 0; i < 4; ++i) out.emplace_back("whole_pc" + std::to_string(i), &p.whole_pc[i]);
  out.emplace_back("whole_score", &p.whole_score);
  return out;
}

}  // namespace

std::vector<Tensor> DiscriminatorParams::trainable() const {
  std::vector<Tensor> out;
  for (const auto& [name, l] : layer_list(*this)) {
    out.push_back(l->weight);
    out.push_back(l->bias);
  }
  return out;
}

std::vector<NamedTensor> DiscriminatorParams::named() const {
  std::vector<NamedTensor> out;
  for (const auto& [name, l] : layer_list(*this)) {
    out.push_back({"disc." + name + ".weight", l->weight});
    out.push_back({"disc." + name + ".bias", l->bias});
  }
  return out;
}

DiscriminatorParams DiscriminatorParams::from_named(const Checkpoint& ckpt) {
  auto lin = [&](const std::string& name) {
    Linear l{ckpt.get("disc." + name + ".weight").detach(), ckpt.get("disc." + name + ".bias").detach()};
    l.weight.set_requires_grad(true);
    l.bias.set_requires_grad(true);
    return l;
  };
  DiscriminatorParams p;
  for (int i = 0; i < 4; ++i) {
    p.part_pc[i] = lin("part_pc" + std::to_string(i));
    p.whole_pc[i] = lin("whole_pc" + std::to_string(i));
  }
  p.leaf_proj = lin("leaf_proj");
  p.tree_embed = lin("tree_embed");
  p.tree_post = lin("tree_post");
  p.struct_score = lin("struct_score");
  p.whole_score = lin("whole_score");
  return p;
}

DiscriminatorParams init_discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::seed_seq seq{seed, std::uint64_t{0xd1}};
  std::vector<std::uint64_t> s(15);
  seq.generate(s.begin(), s.end());
  const auto& w = cfg.pc_widths;
  DiscriminatorParams p;
  const int in[4] = {3, w[0], w[1], w[2]};
  for (int i = 0; i < 4; ++i) {
    p.part_pc[i] = make_linear(in[i], w[i], s[i]);
    p.whole_pc[i] = make_linear(in[i], w[i], s[4 + i]);
  }
  p.leaf_proj = make_linear(w[3], cfg.tree_feat, s[8]);
  p.tree_embed = make_linear(cfg.tree_feat + cfg.num_sem, cfg.tree_feat, s[9]);
  p.tree_post = make_linear(cfg.tree_feat, cfg.tree_feat, s[10]);
  p.struct_score = make_linear(cfg.tree_feat, 1, s[11]);
  p.whole_score = make_linear(w[3], 1, s[12]);
  return p;
}

Tensor encode_points(const PointMlp& mlp, const Tensor& points) {
  require(points.rows() >= 1, ErrorCode::kBadPointCloud, "cannot encode an empty point cloud");
  require(points.cols() == 3, ErrorCode::kShapeMismatch, "point cloud tensor must be [M,3]");
  Tensor h = points;
  for (const Linear& l : mlp) h = leaky_relu(l(h), kLeakySlope);
  return max_pool_set(h).values;
}

Tensor encode_part(const Tensor& part, const DiscriminatorParams& p) { return encode_points(p.part_pc, part); }

Tensor encode_tree(const PartTree& tree, const NodeTensors& leaf_h, const DiscriminatorParams& p) {
  const int S = tree.vocab().size();
  require(p.tree_embed.in_features() == p.tree_post.out_features() + S, ErrorCode::kVocabMismatch,
          "tree vocabulary size does not match the discriminator");
  NodeTensors h;
  for (int id : iter_bottom_up(tree)) {
    const PartNode& n = tree.node(id);
    if (n.is_leaf()) {
      auto it = leaf_h.find(id);
      require(it != leaf_h.end(), ErrorCode::kLeafMismatch, "missing leaf feature for node " + std::to_string(id));
      h[id] = leaky_relu(p.leaf_proj(it->second), kLeakySlope);
      continue;
    }
    std::vector<Tensor> rows;
    for (int c : n.children) {
      const OneHot oh = onehot(tree.node(c), tree.vocab());
      rows.push_back(concat({h.at(c), Tensor::row(oh.sem)}, 1));
    }
    const Tensor embedded = leaky_relu(p.tree_embed(concat(rows, 0)), kLeakySlope);
    h[id] = leaky_relu(p.tree_post(max_pool_set(embedded).values), kLeakySlope);
  }
  return h.at(tree.root());
}

Scores discriminate(const NodeTensors& parts, const PartTree& tree, const DiscriminatorParams& p,
                    const DiscriminatorConfig& cfg) {
  const std::vector<int> leaves = tree.leaves();
  require(parts.size() == leaves.size(), ErrorCode::kLeafMismatch,
          "part set has " + std::to_string(parts.size()) + " clouds for " + std::to_string(leaves.size()) + " leaves");
  for (int leaf : leaves)
    require(parts.count(leaf) == 1, ErrorCode::kLeafMismatch, "part set is missing leaf " + std::to_string(leaf));

  Scores s;
  if (cfg.use_struct) {
    NodeTensors leaf_h;
    for (const auto& [id, pc] : parts) leaf_h[id] = encode_part(pc, p);
    s.y_struct = p.struct_score(encode_tree(tree, leaf_h, p));
  } else {
    s.y_struct = Tensor::zeros(1, 1);
  }
  if (cfg.use_whole) {
    std::vector<Tensor> clouds;
    for (const auto& [id, pc] : parts) clouds.push_back(pc);
    const Tensor all = concat(clouds, 0);
    const PointCloud values(std::vector<float>(all.values().begin(), all.values().end()));
    const Tensor shape = gather_rows(all, downsample_indices(values, static_cast<std::size_t>(cfg.shape_points)));
    s.y_whole = p.whole_score(encode_points(p.whole_pc, shape));
  } else {
    s.y_whole = Tensor::zeros(1, 1);
  }
  s.y = add(s.y_struct, s.y_whole);
  return s;
}

NodeTensors to_tensors(const PartCloudSet& parts) {
  NodeTensors out;
  for (const auto& [id, pc] : parts) out[id] = Tensor::from(static_cast<int>(pc.size()), 3, pc.raw());
  return out;
}

ScoreValues discriminate(const PartCloudSet& parts, const PartTree& tree, const DiscriminatorParams& p,
                         const DiscriminatorConfig& cfg) {
  NoGradScope no_grad;
  const Scores s = discriminate(to_tensors(parts), tree, p, cfg);
  return {s.y.item(), s.y_struct.item(), s.y_whole.item()};
}

}  // namespace pt2pc
