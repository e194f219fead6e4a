#pragma once

// Part-tree conditioned generator G(z, T).
//
// A bottom-up PointNet-style template encoder summarizes each subtree into
// t^j, a top-down decoder turns (parent feature, t^j, s^j, d^j) into f^j
// starting from the latent code at the root, and every leaf feature deforms
// a fixed unit-cube point sample into a part point cloud.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <vector>

#include <json.hpp>

#include "pt2pc/params.hpp"
#include "pt2pc/parttree.hpp"
#include "pt2pc/pcops.hpp"
#include "pt2pc/tensor.hpp"

namespace pt2pc {

inline constexpr float kLeakySlope = 0.2f;

struct GeneratorConfig {
  int num_sem = 1;                 // S
  int feat = 256;                  // width of t and f
  int z_dim = 256;                 // must equal feat
  int pc_hidden = 1024;
  int points_per_part = 1000;      // M
  int shape_points = 2048;         // N
  std::uint64_t cube_seed = 7;

  void validate() const;
  nlohmann::json to_json() const;
  static GeneratorConfig from_json(const nlohmann::json& j);
  bool operator==(const GeneratorConfig&) const = default;
};

struct GeneratorParams {
  Linear enc_embed;  // S+10+F -> F
  Linear enc_post;   // F -> F
  Linear dec1;       // F+F+S+10 -> F
  Linear dec2;       // F -> F
  Linear pc1;        // F+3 -> H
  Linear pc2;        // H -> H
  Linear pc3;        // H -> 3
  Tensor cube;       // [M,3], fixed

  std::vector<Tensor> trainable() const;
  std::vector<NamedTensor> named() const;
  static GeneratorParams from_named(const Checkpoint& ckpt);
};

GeneratorParams init_generator(const GeneratorConfig& cfg, std::uint64_t seed);

using NodeTensors = std::map<int, Tensor>;

/// Row of the latent code, standard normal.
Tensor sample_latent(int dim, std::mt19937_64& rng);

/// DownSample: FPS over the union sorted lexicographically by coordinate,
/// so the result does not depend on point order within parts.
std::vector<int> downsample_indices(const PointCloud& union_pc, std::size_t n);
PointCloud downsample(const PartCloudSet& parts, std::size_t n);

/// t^j for every node; leaves get zeros.
NodeTensors encode_template(const PartTree& tree, const GeneratorParams& p, const GeneratorConfig& cfg);
/// f^j for every node, top-down from z at the root.
NodeTensors decode_features(const PartTree& tree, const NodeTensors& t, const Tensor& z, const GeneratorParams& p,
                            const GeneratorConfig& cfg);
/// [M,3] part cloud: pc_mlp([f; p]) for every cube point p.
Tensor decode_part_pc(const Tensor& f, const GeneratorParams& p, const Tensor& cube);

/// Differentiable part clouds per leaf (records on the active tape).
NodeTensors generate_parts(const PartTree& tree, const Tensor& z, const GeneratorParams& p,
                           const GeneratorConfig& cfg);

struct GeneratedShape {
  PartCloudSet parts;
  PointCloud shape;
};

/// Part clouds plus the downsampled N-point shape cloud. Throws
/// kInsufficientPoints when leaves * M < N.
GeneratedShape generate(const PartTree& tree, const Tensor& z, const GeneratorParams& p, const GeneratorConfig& cfg);

PartCloudSet to_part_clouds(const NodeTensors& parts);

struct TriMesh {
  std::vector<std::array<float, 3>> vertices;
  std::vector<std::array<int, 3>> faces;  // 0-based
};

/// Origin-centered unit cube, each face split into an n x n grid of quads
/// (two triangles each); 6n^2 + 2 shared vertices.
TriMesh unit_cube_mesh(int subdivisions);

/// One deformed cube mesh per leaf; connectivity is unchanged.
std::map<int, TriMesh> generate_mesh(const PartTree& tree, const Tensor& z, const GeneratorParams& p,
                                     const GeneratorConfig& cfg, int subdivisions = 13);

/// Wavefront OBJ with `v` and `f` lines only.
std::string encode_obj(const TriMesh& mesh);

}  // namespace pt2pc
