#include "pt2pc/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <set>
#include <variant>

#include <json.hpp>

#include "pt2pc/error.hpp"
#include "pt2pc/params.hpp"

namespace pt2pc {

namespace fs = std::filesystem;
using json = nlohmann::json;

Category parse_category(const std::string& name) {
  if (name == "table") return Category::kTable;
  if (name == "chair") return Category::kChair;
  if (name == "lamp") return Category::kLamp;
  fail(ErrorCode::kInvalidArgument, "unknown category '" + name + "' (expected table, chair or lamp)");
}

std::string category_name(Category c) {
  switch (c) {
    case Category::kTable: return "table";
    case Category::kChair: return "chair";
    case Category::kLamp: return "lamp";
  }
  return "table";
}

SemanticVocab category_vocab(Category c) {
  switch (c) {
    case Category::kTable:
      return SemanticVocab("table", {"table", "tabletop", "table_base", "leg", "bar", "shelf"});
    case Category::kChair:
      return SemanticVocab("chair", {"chair", "chair_seat", "chair_back", "back_slat", "chair_base", "leg", "bar",
                                     "chair_arm"});
    case Category::kLamp:
      return SemanticVocab("lamp", {"lamp", "lamp_base", "lamp_body", "pole", "arm", "lamp_head", "shade", "bulb"});
  }
  return {};
}

const ShapeRecord& Dataset::shape(const std::string& id) const {
  for (const auto& s : shapes)
    if (s.id == id) return s;
  fail(ErrorCode::kInvalidArgument, "no shape with id '" + id + "'");
}

std::vector<const ShapeRecord*> Dataset::shapes_of(const std::vector<std::string>& template_ids) const {
  std::set<std::string> wanted(template_ids.begin(), template_ids.end());
  std::vector<const ShapeRecord*> out;
  for (const auto& s : shapes)
    if (wanted.count(s.template_id)) out.push_back(&s);
  return out;
}

// ---- geometry ---------------------------------------------------------------

namespace {

using Vec3 = std::array<double, 3>;

struct Box {
  Vec3 center;
  Vec3 half;
  double yaw = 0.0;  // rotation about +y
};

struct Frustum {
  Vec3 base;  // center of the bottom ring
  double r0, r1, height;
  bool caps = true;
};

using Primitive = std::variant<Box, Frustum>;

void push(std::vector<float>& xyz, const Vec3& p) {
  xyz.push_back(static_cast<float>(p[0]));
  xyz.push_back(static_cast<float>(p[1]));
  xyz.push_back(static_cast<float>(p[2]));
}

PointCloud sample_box(const Box& b, int n, std::mt19937_64& rng) {
  const double ax = b.half[0], ay = b.half[1], az = b.half[2];
  const double areas[3] = {ay * az, ax * az, ax * ay};  // faces normal to x, y, z (one side)
  std::discrete_distribution<int> face({areas[0], areas[0], areas[1], areas[1], areas[2], areas[2]});
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  std::vector<float> xyz;
  xyz.reserve(static_cast<std::size_t>(n) * 3);
  for (int i = 0; i < n; ++i) {
    const int f = face(rng);
    const int axis = f / 2;
    Vec3 local{u(rng) * ax, u(rng) * ay, u(rng) * az};
    local[axis] = (f % 2 == 0 ? -1.0 : 1.0) * b.half[axis];
    const Vec3 p{b.center[0] + c * local[0] + s * local[2], b.center[1] + local[1],
                 b.center[2] - s * local[0] + c * local[2]};
    push(xyz, p);
  }
  return PointCloud(std::move(xyz));
}

PointCloud sample_frustum(const Frustum& f, int n, std::mt19937_64& rng) {
  const double slant = std::hypot(f.height, f.r1 - f.r0);
  const double lateral = std::numbers::pi * (f.r0 + f.r1) * slant;
  const double cap0 = f.caps ? std::numbers::pi * f.r0 * f.r0 : 0.0;
  const double cap1 = f.caps ? std::numbers::pi * f.r1 * f.r1 : 0.0;
  std::discrete_distribution<int> part({lateral, cap0, cap1});
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<float> xyz;
  xyz.reserve(static_cast<std::size_t>(n) * 3);
  for (int i = 0; i < n; ++i) {
    const double theta = 2.0 * std::numbers::pi * u(rng);
    const int k = part(rng);
    double r, y;
    if (k == 0) {
      // Radius grows linearly with height, so the area density does too.
      const double a = f.r0, b = f.r1 - f.r0, w = u(rng);
      double t;
      if (std::abs(b) < 1e-12) {
        t = w;
      } else {
        const double total = a + 0.5 * b;
        t = (-a + std::sqrt(a * a + 2.0 * b * w * total)) / b;
      }
      r = f.r0 + (f.r1 - f.r0) * t;
      y = f.height * t;
    } else {
      const double rad = k == 1 ? f.r0 : f.r1;
      r = rad * std::sqrt(u(rng));
      y = k == 1 ? 0.0 : f.height;
    }
    push(xyz, {f.base[0] + r * std::cos(theta), f.base[1] + y, f.base[2] + r * std::sin(theta)});
  }
  return PointCloud(std::move(xyz));
}

PointCloud sample_primitive(const Primitive& p, int n, std::mt19937_64& rng) {
  if (const Box* b = std::get_if<Box>(&p)) return sample_box(*b, n, rng);
  return sample_frustum(std::get<Frustum>(p), n, rng);
}

// Box spanning the segment between two points in the xz-plane.
Box beam(double x0, double z0, double x1, double z1, double y, double thick) {
  const double dx = x1 - x0, dz = z1 - z0;
  const double len = std::hypot(dx, dz);
  return Box{{(x0 + x1) / 2, y, (z0 + z1) / 2}, {len / 2, thick / 2, thick / 2}, -std::atan2(dz, dx)};
}

// ---- templates ----------------------------------------------------------------

struct Blueprint {
  std::string label;
  std::vector<Blueprint> children;
  std::optional<Primitive> geom;  // leaves only
};

Blueprint leaf(std::string label, Primitive g) { return Blueprint{std::move(label), {}, std::move(g)}; }

struct TemplateKnobs {
  int a = 0, b = 0, c = 0, d = 0;
  auto operator<=>(const TemplateKnobs&) const = default;
};

std::vector<TemplateKnobs> all_knobs(Category cat) {
  std::vector<TemplateKnobs> out;
  switch (cat) {
    case Category::kTable:  // legs 3..6, stretchers 0..2, shelf 0/1
      for (int legs = 3; legs <= 6; ++legs)
        for (int bars = 0; bars <= 2; ++bars)
          for (int shelf = 0; shelf <= 1; ++shelf) out.push_back({legs, bars, shelf, 0});
      break;
    case Category::kChair:  // slats 1..4, legs 4..5, stretchers 0..2, arms 0/1
      for (int slats = 1; slats <= 4; ++slats)
        for (int legs = 4; legs <= 5; ++legs)
          for (int bars = 0; bars <= 2; ++bars)
            for (int arms = 0; arms <= 1; ++arms) out.push_back({slats, legs, bars, arms});
      break;
    case Category::kLamp:  // poles 1..3, arm 0/1, shades 1..2, bulb 0/1
      for (int poles = 1; poles <= 3; ++poles)
        for (int arm = 0; arm <= 1; ++arm)
          for (int shades = 1; shades <= 2; ++shades)
            for (int bulb = 0; bulb <= 1; ++bulb) out.push_back({poles, arm, shades, bulb});
      break;
  }
  return out;
}

double uni(std::mt19937_64& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

Blueprint build_table(const TemplateKnobs& k, std::mt19937_64& rng) {
  const int legs = k.a, bars = k.b;
  const bool shelf = k.c != 0;
  const double W = uni(rng, 0.8, 1.4), D = uni(rng, 0.5, 1.0), H = uni(rng, 0.55, 0.85);
  const double top_t = uni(rng, 0.03, 0.07), leg_t = uni(rng, 0.03, 0.07), inset = uni(rng, 0.03, 0.1);
  const double rx = W / 2 - inset, rz = D / 2 - inset, leg_h = H - top_t;

  Blueprint base{"table_base", {}, std::nullopt};
  std::vector<std::array<double, 2>> feet;
  for (int i = 0; i < legs; ++i) {
    const double th = 2.0 * std::numbers::pi * i / legs + std::numbers::pi / 4;
    feet.push_back({rx * std::cos(th), rz * std::sin(th)});
    base.children.push_back(leaf("leg", Box{{feet.back()[0], leg_h / 2, feet.back()[1]}, {leg_t / 2, leg_h / 2, leg_t / 2}}));
  }
  const double bar_y = uni(rng, 0.15, 0.35) * leg_h, bar_t = uni(rng, 0.02, 0.04);
  for (int i = 0; i < bars; ++i) {
    const auto& p = feet[static_cast<std::size_t>(i)];
    const auto& q = feet[static_cast<std::size_t>((i + 1) % legs)];
    base.children.push_back(leaf("bar", beam(p[0], p[1], q[0], q[1], bar_y, bar_t)));
  }
  if (shelf) {
    const double sy = uni(rng, 0.1, 0.25) * leg_h, st = uni(rng, 0.02, 0.04);
    base.children.push_back(leaf("shelf", Box{{0, sy, 0}, {0.7 * rx, st / 2, 0.7 * rz}}));
  }
  Blueprint top = leaf("tabletop", Box{{0, H - top_t / 2, 0}, {W / 2, top_t / 2, D / 2}});
  return Blueprint{"table", {std::move(top), std::move(base)}, std::nullopt};
}

Blueprint build_chair(const TemplateKnobs& k, std::mt19937_64& rng) {
  const int slats = k.a, legs = k.b, bars = k.c;
  const bool arms = k.d != 0;
  const double W = uni(rng, 0.45, 0.6), D = uni(rng, 0.4, 0.55), seat_y = uni(rng, 0.4, 0.5);
  const double seat_t = uni(rng, 0.03, 0.06), leg_t = uni(rng, 0.03, 0.05), back_h = uni(rng, 0.35, 0.55);
  const double rx = W / 2 - 0.03, rz = D / 2 - 0.03;

  Blueprint seat = leaf("chair_seat", Box{{0, seat_y + seat_t / 2, 0}, {W / 2, seat_t / 2, D / 2}});
  Blueprint back{"chair_back", {}, std::nullopt};
  const double slat_w = (W * 0.9) / (2.0 * slats), back_z = -D / 2 + 0.02;
  for (int i = 0; i < slats; ++i) {
    const double x = -W * 0.45 + slat_w * (2 * i + 1);
    back.children.push_back(leaf("back_slat", Box{{x, seat_y + seat_t + back_h / 2, back_z},
                                                  {slat_w * 0.4, back_h / 2, uni(rng, 0.01, 0.025)}}));
  }
  Blueprint base{"chair_base", {}, std::nullopt};
  std::vector<std::array<double, 2>> feet;
  for (int i = 0; i < legs; ++i) {
    const double th = 2.0 * std::numbers::pi * i / legs + std::numbers::pi / 4;
    feet.push_back({rx * std::cos(th), rz * std::sin(th)});
    base.children.push_back(leaf("leg", Box{{feet.back()[0], seat_y / 2, feet.back()[1]}, {leg_t / 2, seat_y / 2, leg_t / 2}}));
  }
  const double bar_y = uni(rng, 0.1, 0.25), bar_t = uni(rng, 0.015, 0.03);
  for (int i = 0; i < bars; ++i) {
    const auto& p = feet[static_cast<std::size_t>(i)];
    const auto& q = feet[static_cast<std::size_t>((i + 1) % legs)];
    base.children.push_back(leaf("bar", beam(p[0], p[1], q[0], q[1], bar_y, bar_t)));
  }
  Blueprint chair{"chair", {std::move(seat), std::move(back), std::move(base)}, std::nullopt};
  if (arms) {
    const double arm_y = seat_y + seat_t + uni(rng, 0.15, 0.25), arm_t = uni(rng, 0.03, 0.05);
    for (int side : {-1, 1})
      chair.children.push_back(leaf("chair_arm", Box{{side * (W / 2 - arm_t / 2), arm_y, 0}, {arm_t / 2, arm_t / 2, D * 0.45}}));
  }
  return chair;
}

Blueprint build_lamp(const TemplateKnobs& k, std::mt19937_64& rng) {
  const int poles = k.a, shades = k.c;
  const bool arm = k.b != 0, bulb = k.d != 0;
  const double base_r = uni(rng, 0.12, 0.2), base_h = uni(rng, 0.03, 0.06);
  const double pole_r = uni(rng, 0.01, 0.025), seg_h = uni(rng, 0.5, 0.8) / poles;

  Blueprint base = leaf("lamp_base", Frustum{{0, 0, 0}, base_r, base_r * uni(rng, 0.6, 1.0), base_h});
  Blueprint body{"lamp_body", {}, std::nullopt};
  double y = base_h;
  for (int i = 0; i < poles; ++i) {
    const double r = pole_r * (1.0 - 0.15 * i);
    body.children.push_back(leaf("pole", Frustum{{0, y, 0}, r, r, seg_h}));
    y += seg_h;
  }
  double head_x = 0.0;
  if (arm) {
    const double reach = uni(rng, 0.15, 0.3), t = uni(rng, 0.015, 0.03);
    body.children.push_back(leaf("arm", Box{{reach / 2, y, 0}, {reach / 2, t / 2, t / 2}}));
    head_x = reach;
  }
  Blueprint head{"lamp_head", {}, std::nullopt};
  const double shade_h = uni(rng, 0.12, 0.22), shade_r0 = uni(rng, 0.12, 0.2), shade_r1 = shade_r0 * uni(rng, 0.4, 0.8);
  for (int i = 0; i < shades; ++i) {
    const double off = shades == 1 ? 0.0 : (i == 0 ? -1.0 : 1.0) * shade_r0 * 1.1;
    head.children.push_back(leaf("shade", Frustum{{head_x + off, y - shade_h * 0.6, 0}, shade_r0, shade_r1, shade_h, false}));
  }
  if (bulb) {
    const double br = uni(rng, 0.03, 0.05);
    head.children.push_back(leaf("bulb", Frustum{{head_x, y - shade_h * 0.4, 0}, br, br * 0.7, br * 1.5}));
  }
  return Blueprint{"lamp", {std::move(base), std::move(body), std::move(head)}, std::nullopt};
}

Blueprint build(Category cat, const TemplateKnobs& k, std::mt19937_64& rng) {
  switch (cat) {
    case Category::kTable: return build_table(k, rng);
    case Category::kChair: return build_chair(k, rng);
    case Category::kLamp: return build_lamp(k, rng);
  }
  return build_table(k, rng);
}

void flatten(const Blueprint& s, const SemanticVocab& vocab, std::map<int, PartNode>& nodes,
             std::map<int, const Primitive*>& geoms, int& next_id) {
  PartNode n;
  n.id = next_id++;
  n.sem = vocab.index_of(s.label);
  const int id = n.id;
  nodes.emplace(id, n);
  if (s.children.empty()) geoms.emplace(id, &*s.geom);
  for (const Blueprint& c : s.children) {
    const int cid = next_id;
    flatten(c, vocab, nodes, geoms, next_id);
    nodes.at(id).children.push_back(cid);
  }
}

void normalize(PartCloudSet& parts) {
  double lo[3] = {1e300, 1e300, 1e300}, hi[3] = {-1e300, -1e300, -1e300};
  for (const auto& [id, pc] : parts)
    for (std::size_t i = 0; i < pc.size(); ++i) {
      const auto p = pc.point(i);
      for (int a = 0; a < 3; ++a) {
        lo[a] = std::min(lo[a], static_cast<double>(p[a]));
        hi[a] = std::max(hi[a], static_cast<double>(p[a]));
      }
    }
  const double diag = std::sqrt((hi[0] - lo[0]) * (hi[0] - lo[0]) + (hi[1] - lo[1]) * (hi[1] - lo[1]) +
                                (hi[2] - lo[2]) * (hi[2] - lo[2]));
  require(diag > 0.0, ErrorCode::kNormalization, "degenerate shape with zero extent");
  for (auto& [id, pc] : parts) {
    auto d = pc.mutable_data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      const int a = static_cast<int>(i % 3);
      d[i] = static_cast<float>((d[i] - 0.5 * (lo[a] + hi[a])) / diag);
    }
  }
}

std::string template_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "t%03d", i);
  return buf;
}

std::string shape_name(int t, int s) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "t%03d_s%03d", t, s);
  return buf;
}

}  // namespace

bool is_normalized(const PartCloudSet& parts, double tol) {
  double lo[3] = {1e300, 1e300, 1e300}, hi[3] = {-1e300, -1e300, -1e300};
  bool any = false;
  for (const auto& [id, pc] : parts)
    for (std::size_t i = 0; i < pc.size(); ++i) {
      any = true;
      const auto p = pc.point(i);
      for (int a = 0; a < 3; ++a) {
        lo[a] = std::min(lo[a], static_cast<double>(p[a]));
        hi[a] = std::max(hi[a], static_cast<double>(p[a]));
      }
    }
  if (!any) return false;
  double diag2 = 0.0;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(0.5 * (lo[a] + hi[a])) > tol) return false;
    diag2 += (hi[a] - lo[a]) * (hi[a] - lo[a]);
  }
  return std::abs(std::sqrt(diag2) - 1.0) <= tol;
}

int max_templates(Category c) { return static_cast<int>(all_knobs(c).size()); }

Dataset synthesize(const SynthConfig& cfg) {
  require(cfg.n_templates >= 1, ErrorCode::kInvalidArgument, "synth: n_templates must be >= 1");
  require(cfg.shapes_per_template >= 1, ErrorCode::kInvalidArgument, "synth: shapes_per_template must be >= 1");
  require(cfg.points_per_part >= 1, ErrorCode::kInvalidArgument, "synth: points_per_part must be >= 1");
  const int available = max_templates(cfg.category);
  require(cfg.n_templates <= available, ErrorCode::kInvalidArgument,
          "synth: " + category_name(cfg.category) + " supports at most " + std::to_string(available) + " templates");

  std::mt19937_64 rng(cfg.seed);
  std::vector<TemplateKnobs> knobs = all_knobs(cfg.category);
  std::shuffle(knobs.begin(), knobs.end(), rng);
  knobs.resize(static_cast<std::size_t>(cfg.n_templates));

  Dataset ds;
  ds.category = category_name(cfg.category);
  ds.vocab = category_vocab(cfg.category);
  ds.points_per_part = cfg.points_per_part;
  ds.split_ratio = cfg.split_ratio;
  ds.split_seed = cfg.seed;
  for (int t = 0; t < cfg.n_templates; ++t) {
    for (int s = 0; s < cfg.shapes_per_template; ++s) {
      const Blueprint spec = build(cfg.category, knobs[static_cast<std::size_t>(t)], rng);
      std::map<int, PartNode> nodes;
      std::map<int, const Primitive*> geoms;
      int next = 0;
      flatten(spec, ds.vocab, nodes, geoms, next);
      ShapeRecord rec;
      rec.id = shape_name(t, s);
      rec.template_id = template_name(t);
      rec.tree = canonicalize(PartTree::from_nodes(ds.vocab, 0, std::move(nodes)));
      for (const auto& [id, g] : geoms) rec.parts.emplace(id, sample_primitive(*g, cfg.points_per_part, rng));
      normalize(rec.parts);
      ds.by_template[rec.template_id].push_back(rec.id);
      ds.shapes.push_back(std::move(rec));
    }
  }
  if (cfg.n_templates >= 2) ds.split = split_by_template(ds.shapes, cfg.split_ratio, cfg.seed);
  else
    for (const auto& s : ds.shapes) ds.split.train_shapes.push_back(s.id), ds.split.train_templates = {s.template_id};
  return ds;
}

DatasetSplit split_by_template(const std::vector<ShapeRecord>& records, double ratio, std::uint64_t seed) {
  require(ratio > 0.0 && ratio < 1.0, ErrorCode::kInvalidArgument, "split ratio must be in (0,1)");
  std::vector<std::string> templates;
  for (const auto& r : records)
    if (std::find(templates.begin(), templates.end(), r.template_id) == templates.end())
      templates.push_back(r.template_id);
  require(templates.size() >= 2, ErrorCode::kInvalidArgument, "split_by_template needs at least 2 templates");
  std::sort(templates.begin(), templates.end());
  std::mt19937_64 rng(seed);
  std::shuffle(templates.begin(), templates.end(), rng);
  const auto T = templates.size();
  const auto n_train = std::min(T - 1, static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(T) - 1e-9)));

  DatasetSplit split;
  split.train_templates.assign(templates.begin(), templates.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.test_templates.assign(templates.begin() + static_cast<std::ptrdiff_t>(n_train), templates.end());
  std::sort(split.train_templates.begin(), split.train_templates.end());
  std::sort(split.test_templates.begin(), split.test_templates.end());
  const std::set<std::string> train(split.train_templates.begin(), split.train_templates.end());
  for (const auto& r : records) (train.count(r.template_id) ? split.train_shapes : split.test_shapes).push_back(r.id);
  return split;
}

std::optional<PartNetCounts> partnet_counts(const std::string& category) {
  if (category == "chair") return PartNetCounts{4871, 3848, 1023, 2197, 1648, 549};
  if (category == "table") return PartNetCounts{5099, 4146, 953, 1267, 925, 342};
  if (category == "cabinet") return PartNetCounts{846, 606, 240, 619, 470, 149};
  if (category == "lamp") return PartNetCounts{802, 569, 233, 302, 224, 78};
  return std::nullopt;
}

void write_dataset(const Dataset& ds, const fs::path& dir) {
  fs::create_directories(dir / "shapes");
  nlohmann::ordered_json meta;
  meta["category"] = ds.category;
  meta["semantics"] = ds.vocab.labels();
  meta["points_per_part"] = ds.points_per_part;
  meta["source"] = ds.source;
  meta["templates"] = nlohmann::ordered_json::object();
  for (const auto& [tid, ids] : ds.by_template) meta["templates"][tid] = ids;
  meta["splits"] = {{"ratio", ds.split_ratio},
                    {"seed", ds.split_seed},
                    {"train", ds.split.train_templates},
                    {"test", ds.split.test_templates}};
  write_file(dir / "meta.json", meta.dump(2) + "\n");
  for (const auto& s : ds.shapes) {
    const fs::path sd = dir / "shapes" / s.id;
    write_file(sd / "tree.json", serialize_tree(s.tree));
    for (const auto& [leaf, pc] : s.parts) save_pc3f(sd / "parts" / (std::to_string(leaf) + ".pc3f"), pc);
  }
}

Dataset synth(const SynthConfig& cfg, const fs::path& dir) {
  Dataset ds = synthesize(cfg);
  write_dataset(ds, dir);
  return ds;
}

Dataset load_dataset(const fs::path& dir) {
  const fs::path meta_path = dir / "meta.json";
  require(fs::exists(meta_path), ErrorCode::kMissingMeta, "dataset has no meta.json: " + meta_path.string());
  json meta;
  try {
    meta = json::parse(read_file(meta_path));
  } catch (const json::exception& e) {
    fail(ErrorCode::kBadMeta, std::string("meta.json: ") + e.what());
  }

  Dataset ds;
  std::vector<std::pair<std::string, std::vector<std::string>>> templates;
  try {
    ds.category = meta.at("category").get<std::string>();
    ds.vocab = SemanticVocab(ds.category, meta.at("semantics").get<std::vector<std::string>>());
    ds.points_per_part = meta.at("points_per_part").get<int>();
    ds.source = meta.value("source", std::string("synthetic"));
    const auto& splits = meta.at("splits");
    ds.split_ratio = splits.at("ratio").get<double>();
    ds.split_seed = splits.at("seed").get<std::uint64_t>();
    ds.split.train_templates = splits.at("train").get<std::vector<std::string>>();
    ds.split.test_templates = splits.at("test").get<std::vector<std::string>>();
    for (const auto& [tid, ids] : meta.at("templates").items())
      templates.emplace_back(tid, ids.get<std::vector<std::string>>());
  } catch (const json::exception& e) {
    fail(ErrorCode::kBadMeta, std::string("meta.json: ") + e.what());
  } catch (const Error& e) {
    fail(ErrorCode::kBadMeta, std::string("meta.json: ") + e.what());
  }
  require(ds.points_per_part >= 1, ErrorCode::kBadMeta, "meta.json: points_per_part must be positive");

  std::set<std::string> known;
  for (const auto& [tid, ids] : templates) known.insert(tid);
  std::set<std::string> train(ds.split.train_templates.begin(), ds.split.train_templates.end());
  for (const auto& tid : ds.split.test_templates)
    require(!train.count(tid), ErrorCode::kSplitOverlap, "template " + tid + " is in both train and test splits");
  for (const auto* list : {&ds.split.train_templates, &ds.split.test_templates})
    for (const auto& tid : *list) require(known.count(tid), ErrorCode::kBadMeta, "split names unknown template " + tid);
  require(train.size() + ds.split.test_templates.size() == known.size(), ErrorCode::kBadMeta,
          "every template must belong to exactly one split");

  std::set<std::string> seen_shapes;
  for (const auto& [tid, ids] : templates) {
    std::optional<std::size_t> first;
    for (const auto& sid : ids) {
      require(seen_shapes.insert(sid).second, ErrorCode::kBadMeta, "shape " + sid + " listed twice");
      const fs::path sd = dir / "shapes" / sid;
      const fs::path tree_path = sd / "tree.json";
      require(fs::exists(tree_path), ErrorCode::kMissingTree, "shape " + sid + " has no tree.json");
      ShapeRecord rec;
      rec.id = sid;
      rec.template_id = tid;
      rec.tree = parse_tree(read_file(tree_path), ds.vocab);

      const auto leaves = rec.tree.leaves();
      for (int leaf : leaves) {
        const fs::path pp = sd / "parts" / (std::to_string(leaf) + ".pc3f");
        require(fs::exists(pp), ErrorCode::kMissingPart,
                "shape " + sid + " is missing the part cloud for leaf " + std::to_string(leaf));
        PointCloud pc = load_pc3f(pp);
        require(pc.size() == static_cast<std::size_t>(ds.points_per_part), ErrorCode::kPartSizeMismatch,
                "shape " + sid + " leaf " + std::to_string(leaf) + " has " + std::to_string(pc.size()) +
                    " points, expected " + std::to_string(ds.points_per_part));
        rec.parts.emplace(leaf, std::move(pc));
      }
      if (fs::exists(sd / "parts"))
        for (const auto& entry : fs::directory_iterator(sd / "parts")) {
          const std::string stem = entry.path().stem().string();
          const bool is_leaf = std::any_of(leaves.begin(), leaves.end(), [&](int l) { return std::to_string(l) == stem; });
          require(is_leaf && entry.path().extension() == ".pc3f", ErrorCode::kExtraPart,
                  "shape " + sid + " has a part file that is not a leaf: " + entry.path().filename().string());
        }
      require(is_normalized(rec.parts), ErrorCode::kNormalization,
              "shape " + sid + " is not normalized to a unit-diagonal box centered at the origin");
      ds.by_template[tid].push_back(sid);
      ds.shapes.push_back(std::move(rec));
      if (!first) first = ds.shapes.size() - 1;
      else
        require(ds.shapes[*first].tree == ds.shapes.back().tree, ErrorCode::kTemplateMismatch,
                "shape " + sid + " does not share the symbolic tree of template " + tid);
    }
  }

  for (const auto& s : ds.shapes) (train.count(s.template_id) ? ds.split.train_shapes : ds.split.test_shapes).push_back(s.id);

  if (ds.source == "partnet") {
    const auto expected = partnet_counts(ds.category);
    require(expected.has_value(), ErrorCode::kCountMismatch, "no reference counts for PartNet category " + ds.category);
    const int got[6] = {static_cast<int>(ds.shapes.size()), static_cast<int>(ds.split.train_shapes.size()),
                        static_cast<int>(ds.split.test_shapes.size()), static_cast<int>(known.size()),
                        static_cast<int>(ds.split.train_templates.size()), static_cast<int>(ds.split.test_templates.size())};
    const int want[6] = {expected->shapes_total, expected->shapes_train, expected->shapes_test,
                         expected->trees_total,  expected->trees_train,  expected->trees_test};
    const char* names[6] = {"shapes", "train shapes", "test shapes", "part trees", "train part trees", "test part trees"};
    for (int i = 0; i < 6; ++i)
      require(got[i] == want[i], ErrorCode::kCountMismatch,
              "PartNet " + ds.category + ": " + names[i] + " = " + std::to_string(got[i]) + ", expected " +
                  std::to_string(want[i]));
  }
  return ds;
}

}  // namespace pt2pc
