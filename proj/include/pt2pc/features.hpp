#pragma once

// Point-cloud feature extractors for the Frechet point-cloud distance.

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "pt2pc/discriminator.hpp"
#include "pt2pc/pcops.hpp"
#include "pt2pc/tensor.hpp"

namespace pt2pc {

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual int dim() const = 0;
  /// Deterministic, finite k-vector for one shape cloud.
  virtual std::vector<float> extract(const PointCloud& shape) const = 0;
  virtual std::string provenance() const = 0;
};

struct ExtractorConfig {
  std::array<int, 4> widths{32, 64, 64, 32};
  int input_points = 512;  // clouds are downsampled to this size first
  int epochs = 40;
  float lr = 1e-3f;
  std::uint64_t seed = 0;
};

/// Small PointNet classifier; features are the max-pooled trunk output.
class PointNetExtractor : public FeatureExtractor {
 public:
  PointNetExtractor() = default;
  PointNetExtractor(PointMlp trunk, Linear head, int input_points, std::string provenance);

  int dim() const override { return trunk_[3].out_features(); }
  std::vector<float> extract(const PointCloud& shape) const override;
  std::string provenance() const override { return provenance_; }

  int num_classes() const { return head_.out_features(); }
  /// Index of the largest logit.
  int classify(const PointCloud& shape) const;

  Checkpoint to_checkpoint() const;
  static PointNetExtractor from_checkpoint(const Checkpoint& ckpt);

  friend PointNetExtractor train_extractor(const std::vector<PointCloud>& clouds, const std::vector<int>& labels,
                                           int num_classes, const ExtractorConfig& cfg, const std::string& provenance);

 private:
  Tensor logits(const PointCloud& shape) const;
  PointCloud prepare(const PointCloud& shape) const;

  PointMlp trunk_;
  Linear head_;
  int input_points_ = 512;
  std::string provenance_;
};

/// Trains the classifier with per-sample Adam steps on cross-entropy,
/// visiting the clouds in a seeded shuffled order each epoch.
PointNetExtractor train_extractor(const std::vector<PointCloud>& clouds, const std::vector<int>& labels,
                                  int num_classes, const ExtractorConfig& cfg, const std::string& provenance);

}  // namespace pt2pc
