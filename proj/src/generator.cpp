#include "pt2pc/generator.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "pt2pc/error.hpp"

namespace pt2pc {

void GeneratorConfig::validate() const {
  require(num_sem >= 1, ErrorCode::kInvalidArgument, "generator: vocabulary size must be >= 1");
  require(feat >= 1 && pc_hidden >= 1, ErrorCode::kInvalidArgument, "generator: widths must be positive");
  require(z_dim == feat, ErrorCode::kInvalidArgument,
          "generator: z_dim (" + std::to_string(z_dim) + ") must equal the feature width (" + std::to_string(feat) + ")");
  require(points_per_part >= 1 && shape_points >= 1, ErrorCode::kInvalidArgument, "generator: point counts must be positive");
}

nlohmann::json GeneratorConfig::to_json() const {
  return {{"num_sem", num_sem},     {"feat", feat},
          {"z_dim", z_dim},         {"pc_hidden", pc_hidden},
          {"points_per_part", points_per_part}, {"shape_points", shape_points},
          {"cube_seed", cube_seed}};
}

GeneratorConfig GeneratorConfig::from_json(const nlohmann::json& j) {
  GeneratorConfig c;
  c.num_sem = j.at("num_sem").get<int>();
  c.feat = j.at("feat").get<int>();
  c.z_dim = j.at("z_dim").get<int>();
  c.pc_hidden = j.at("pc_hidden").get<int>();
  c.points_per_part = j.at("points_per_part").get<int>();
  c.shape_points = j.at("shape_points").get<int>();
  c.cube_seed = j.at("cube_seed").get<std::uint64_t>();
  c.validate();
  return c;
}

std::vector<Tensor> GeneratorParams::trainable() const {
  std::vector<Tensor> out;
  for (const Linear* l : {&enc_embed, &enc_post, &dec1, &dec2, &pc1, &pc2, &pc3}) {
    out.push_back(l->weight);
    out.push_back(l->bias);
  }
  return out;
}

std::vector<NamedTensor> GeneratorParams::named() const {
  std::vector<NamedTensor> out;
  const std::pair<const char*, const Linear*> layers[] = {{"enc_embed", &enc_embed}, {"enc_post", &enc_post},
                                                          {"dec1", &dec1},           {"dec2", &dec2},
                                                          {"pc1", &pc1},             {"pc2", &pc2},
                                                          {"pc3", &pc3}};
  for (const auto& [name, l] : layers) {
    out.push_back({std::string("gen.") + name + ".weight", l->weight});
    out.push_back({std::string("gen.") + name + ".bias", l->bias});
  }
  out.push_back({"gen.cube", cube});
  return out;
}

GeneratorParams GeneratorParams::from_named(const Checkpoint& ckpt) {
  auto lin = [&](const std::string& name) {
    Linear l{ckpt.get("gen." + name + ".weight").detach(), ckpt.get("gen." + name + ".bias").detach()};
    l.weight.set_requires_grad(true);
    l.bias.set_requires_grad(true);
    return l;
  };
  GeneratorParams p;
  p.enc_embed = lin("enc_embed");
  p.enc_post = lin("enc_post");
  p.dec1 = lin("dec1");
  p.dec2 = lin("dec2");
  p.pc1 = lin("pc1");
  p.pc2 = lin("pc2");
  p.pc3 = lin("pc3");
  p.cube = ckpt.get("gen.cube").detach();
  return p;
}

GeneratorParams init_generator(const GeneratorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const int S = cfg.num_sem, F = cfg.feat, H = cfg.pc_hidden;
  std::seed_seq seq{seed, std::uint64_t{0x6e}};
  std::vector<std::uint64_t> seeds(7);
  seq.generate(seeds.begin(), seeds.end());
  GeneratorParams p;
  p.enc_embed = make_linear(F + S + kNumOrdinals, F, seeds[0]);
  p.enc_post = make_linear(F, F, seeds[1]);
  p.dec1 = make_linear(F + F + S + kNumOrdinals, F, seeds[2]);
  p.dec2 = make_linear(F, F, seeds[3]);
  p.pc1 = make_linear(F + 3, H, seeds[4]);
  p.pc2 = make_linear(H, H, seeds[5]);
  p.pc3 = make_linear(H, 3, seeds[6]);
  const PointCloud cube = sample_cube(static_cast<std::size_t>(cfg.points_per_part), cfg.cube_seed);
  p.cube = Tensor::from(cfg.points_per_part, 3, cube.raw());
  return p;
}

Tensor sample_latent(int dim, std::mt19937_64& rng) {
  std::normal_distribution<float> n(0.0f, 1.0f);
  std::vector<float> z(static_cast<std::size_t>(dim));
  for (auto& v : z) v = n(rng);
  return Tensor::from(1, dim, std::move(z));
}

std::vector<int> downsample_indices(const PointCloud& union_pc, std::size_t n) {
  std::vector<int> order(union_pc.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return union_pc.point(static_cast<std::size_t>(a)) < union_pc.point(static_cast<std::size_t>(b)); });
  const PointCloud sorted = gather(union_pc, order);
  std::vector<int> picked = fps_indices(sorted, n);
  for (int& i : picked) i = order[static_cast<std::size_t>(i)];
  return picked;
}

PointCloud downsample(const PartCloudSet& parts, std::size_t n) {
  const PointCloud u = union_cloud(parts);
  return gather(u, downsample_indices(u, n));
}

namespace {

void check_tree(const PartTree& tree, const GeneratorConfig& cfg) {
  require(tree.vocab().size() == cfg.num_sem, ErrorCode::kVocabMismatch,
          "tree vocabulary size " + std::to_string(tree.vocab().size()) + " does not match the model (" +
              std::to_string(cfg.num_sem) + ")");
  require(tree.ordinals_set(), ErrorCode::kInvalidArgument, "generator needs a canonical tree (ordinals set)");
}

Tensor sem_id_row(const PartTree& tree, int id) {
  const OneHot h = onehot(tree.node(id), tree.vocab());
  std::vector<float> v = h.sem;
  v.insert(v.end(), h.id.begin(), h.id.end());
  return Tensor::row(v);
}

Tensor dec_mlp(const GeneratorParams& p, const Tensor& x) {
  return leaky_relu(p.dec2(leaky_relu(p.dec1(x), kLeakySlope)), kLeakySlope);
}

}  // namespace

NodeTensors encode_template(const PartTree& tree, const GeneratorParams& p, const GeneratorConfig& cfg) {
  check_tree(tree, cfg);
  NodeTensors t;
  for (int id : iter_bottom_up(tree)) {
    const PartNode& n = tree.node(id);
    if (n.is_leaf()) {
      t[id] = Tensor::zeros(1, cfg.feat);
      continue;
    }
    require(static_cast<int>(n.children.size()) <= kMaxChildren, ErrorCode::kChildrenOverflow,
            "children overflow at node " + std::to_string(id));
    std::vector<Tensor> rows;
    rows.reserve(n.children.size());
    for (int c : n.children) rows.push_back(concat({t.at(c), sem_id_row(tree, c)}, 1));
    const Tensor embedded = leaky_relu(p.enc_embed(concat(rows, 0)), kLeakySlope);
    t[id] = leaky_relu(p.enc_post(max_pool_set(embedded).values), kLeakySlope);
  }
  return t;
}

NodeTensors decode_features(const PartTree& tree, const NodeTensors& t, const Tensor& z, const GeneratorParams& p,
                            const GeneratorConfig& cfg) {
  check_tree(tree, cfg);
  require(z.rows() == 1 && z.cols() == cfg.z_dim, ErrorCode::kShapeMismatch, "latent code has the wrong width");
  NodeTensors f;
  for (int id : iter_top_down(tree)) {
    auto ti = t.find(id);
    require(ti != t.end(), ErrorCode::kInvalidArgument, "missing template feature for node " + std::to_string(id));
    const int parent = tree.parent(id);
    const Tensor& context = parent < 0 ? z : f.at(parent);
    f[id] = dec_mlp(p, concat({context, ti->second, sem_id_row(tree, id)}, 1));
  }
  return f;
}

Tensor decode_part_pc(const Tensor& f, const GeneratorParams& p, const Tensor& cube) {
  require(f.rows() == 1 && f.cols() + 3 == p.pc1.in_features(), ErrorCode::kShapeMismatch,
          "part feature width does not match the point decoder");
  require(cube.cols() == 3 && cube.rows() >= 1, ErrorCode::kShapeMismatch, "cube sample must be [M,3]");
  const Tensor x = concat({repeat_rows(f, cube.rows()), cube}, 1);
  return p.pc3(leaky_relu(p.pc2(leaky_relu(p.pc1(x), kLeakySlope)), kLeakySlope));
}

NodeTensors generate_parts(const PartTree& tree, const Tensor& z, const GeneratorParams& p,
                           const GeneratorConfig& cfg) {
  const NodeTensors t = encode_template(tree, p, cfg);
  const NodeTensors f = decode_features(tree, t, z, p, cfg);
  NodeTensors parts;
  for (int leaf : tree.leaves()) parts[leaf] = decode_part_pc(f.at(leaf), p, p.cube);
  return parts;
}

PartCloudSet to_part_clouds(const NodeTensors& parts) {
  PartCloudSet out;
  for (const auto& [id, t] : parts) out.emplace(id, PointCloud(std::vector<float>(t.values().begin(), t.values().end())));
  return out;
}

GeneratedShape generate(const PartTree& tree, const Tensor& z, const GeneratorParams& p, const GeneratorConfig& cfg) {
  const std::size_t total = tree.num_leaves() * static_cast<std::size_t>(p.cube.rows());
  require(total >= static_cast<std::size_t>(cfg.shape_points), ErrorCode::kInsufficientPoints,
          "insufficient points: " + std::to_string(tree.num_leaves()) + " leaves x " + std::to_string(p.cube.rows()) +
              " points < N=" + std::to_string(cfg.shape_points));
  NoGradScope no_grad;
  GeneratedShape out;
  out.parts = to_part_clouds(generate_parts(tree, z, p, cfg));
  out.shape = downsample(out.parts, static_cast<std::size_t>(cfg.shape_points));
  return out;
}

TriMesh unit_cube_mesh(int n) {
  require(n >= 1, ErrorCode::kInvalidArgument, "cube mesh subdivisions must be >= 1");
  TriMesh mesh;
  std::map<std::array<int, 3>, int> index;
  auto vertex = [&](std::array<int, 3> g) {
    auto [it, inserted] = index.try_emplace(g, static_cast<int>(mesh.vertices.size()));
    if (inserted)
      mesh.vertices.push_back({static_cast<float>(g[0]) / n - 0.5f, static_cast<float>(g[1]) / n - 0.5f,
                               static_cast<float>(g[2]) / n - 0.5f});
    return it->second;
  };
  for (int axis = 0; axis < 3; ++axis) {
    for (int side = 0; side < 2; ++side) {
      const int u = (axis + 1) % 3, v = (axis + 2) % 3;
      for (int a = 0; a < n; ++a) {
        for (int b = 0; b < n; ++b) {
          auto grid = [&](int da, int db) {
            std::array<int, 3> g{};
            g[axis] = side * n;
            g[u] = a + da;
            g[v] = b + db;
            return vertex(g);
          };
          const int v00 = grid(0, 0), v10 = grid(1, 0), v11 = grid(1, 1), v01 = grid(0, 1);
          // (u, v, axis) is right-handed, so u x v points along +axis.
          if (side == 1) {
            mesh.faces.push_back({v00, v10, v11});
            mesh.faces.push_back({v00, v11, v01});
          } else {
            mesh.faces.push_back({v00, v11, v10});
            mesh.faces.push_back({v00, v01, v11});
          }
        }
      }
    }
  }
  return mesh;
}

std::map<int, TriMesh> generate_mesh(const PartTree& tree, const Tensor& z, const GeneratorParams& p,
                                     const GeneratorConfig& cfg, int subdivisions) {
  const TriMesh cube = unit_cube_mesh(subdivisions);
  std::vector<float> flat;
  flat.reserve(cube.vertices.size() * 3);
  for (const auto& v : cube.vertices) flat.insert(flat.end(), v.begin(), v.end());
  const Tensor verts = Tensor::from(static_cast<int>(cube.vertices.size()), 3, std::move(flat));

  NoGradScope no_grad;
  const NodeTensors t = encode_template(tree, p, cfg);
  const NodeTensors f = decode_features(tree, t, z, p, cfg);
  std::map<int, TriMesh> out;
  for (int leaf : tree.leaves()) {
    const Tensor moved = decode_part_pc(f.at(leaf), p, verts);
    TriMesh m;
    m.faces = cube.faces;
    m.vertices.resize(cube.vertices.size());
    for (std::size_t i = 0; i < m.vertices.size(); ++i)
      m.vertices[i] = {moved.at(static_cast<int>(i), 0), moved.at(static_cast<int>(i), 1), moved.at(static_cast<int>(i), 2)};
    out.emplace(leaf, std::move(m));
  }
  return out;
}

std::string encode_obj(const TriMesh& mesh) {
  std::ostringstream os;
  os.precision(9);
  for (const auto& v : mesh.vertices) os << "v " << v[0] << ' ' << v[1] << ' ' << v[2] << '\n';
  for (const auto& f : mesh.faces) os << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
  return os.str();
}

}  // namespace pt2pc
