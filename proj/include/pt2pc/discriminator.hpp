#pragma once

// Conditional discriminator D(X, T) = D_struct(X, T) + D_whole(DownSample(X)).

#include <array>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "pt2pc/generator.hpp"
#include "pt2pc/params.hpp"
#include "pt2pc/parttree.hpp"
#include "pt2pc/pcops.hpp"
#include "pt2pc/tensor.hpp"

namespace pt2pc {

struct DiscriminatorConfig {
  int num_sem = 1;
  std::array<int, 4> pc_widths{64, 128, 128, 1024};
  int tree_feat = 256;
  int shape_points = 2048;  // N for the whole-shape head
  bool use_struct = true;
  bool use_whole = true;

  void validate() const;
  nlohmann::json to_json() const;
  static DiscriminatorConfig from_json(const nlohmann::json& j);
  bool operator==(const DiscriminatorConfig&) const = default;
};

/// Vanilla PointNet trunk: four per-point layers, no normalization.
using PointMlp = std::array<Linear, 4>;

struct DiscriminatorParams {
  PointMlp part_pc;
  Linear leaf_proj;     // w4 -> T
  Linear tree_embed;    // T+S -> T
  Linear tree_post;     // T -> T
  Linear struct_score;  // T -> 1
  PointMlp whole_pc;
  Linear whole_score;   // w4 -> 1

  std::vector<Tensor> trainable() const;
  std::vector<NamedTensor> named() const;
  static DiscriminatorParams from_named(const Checkpoint& ckpt);
};

DiscriminatorParams init_discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed);

/// Per-point MLP with leaky ReLU after every layer, then a columnwise max.
Tensor encode_points(const PointMlp& mlp, const Tensor& points);
/// h^j for one part cloud [M,3] -> [1,w4].
Tensor encode_part(const Tensor& part, const DiscriminatorParams& p);
/// Bottom-up tree aggregation from per-leaf [1,w4] features to h^root [1,T].
Tensor encode_tree(const PartTree& tree, const NodeTensors& leaf_h, const DiscriminatorParams& p);

struct Scores {
  Tensor y;
  Tensor y_struct;
  Tensor y_whole;
};

/// Disabled heads contribute an exact zero.
Scores discriminate(const NodeTensors& parts, const PartTree& tree, const DiscriminatorParams& p,
                    const DiscriminatorConfig& cfg);

struct ScoreValues {
  float y = 0, y_struct = 0, y_whole = 0;
};
ScoreValues discriminate(const PartCloudSet& parts, const PartTree& tree, const DiscriminatorParams& p,
                         const DiscriminatorConfig& cfg);

NodeTensors to_tensors(const PartCloudSet& parts);

}  // namespace pt2pc
