#pragma once

// WGAN-gp training of the conditional generator against the conditional
// discriminator, one tree recursion per batch item.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <vector>

#include <json.hpp>

#include "pt2pc/discriminator.hpp"
#include "pt2pc/generator.hpp"
#include "pt2pc/params.hpp"
#include "pt2pc/parttree.hpp"
#include "pt2pc/pcops.hpp"
#include "pt2pc/tensor.hpp"

namespace pt2pc {

struct TrainConfig {
  int n_critic = 10;
  float lambda_gp = 1.0f;
  int steps = 0;  // generator steps
  int batch = 8;
  std::uint64_t seed = 0;
  int checkpoint_every = 500;
  AdamConfig adam;
  GeneratorConfig gen;
  DiscriminatorConfig disc;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Full-size widths for vocabulary size `num_sem`.
TrainConfig default_train_config(int num_sem);

struct ModelParams {
  SemanticVocab vocab;
  GeneratorConfig gen_cfg;
  DiscriminatorConfig disc_cfg;
  GeneratorParams gen;
  DiscriminatorParams disc;
  std::int64_t step = 0;

  Checkpoint to_checkpoint(const nlohmann::json& extra = nlohmann::json::object()) const;
  static ModelParams from_checkpoint(const Checkpoint& ckpt);
};

ModelParams init_model(const SemanticVocab& vocab, const TrainConfig& cfg);

struct TrainItem {
  const PartTree* tree = nullptr;
  const PartCloudSet* real = nullptr;
};

struct InterpolatedSample {
  PartCloudSet x_hat;
  float alpha = 0;
};

/// x_hat = alpha * real + (1 - alpha) * fake, one alpha for every part.
InterpolatedSample interpolate_parts(const PartCloudSet& real, const PartCloudSet& fake, float alpha);

using PartScorer = std::function<Tensor(const NodeTensors&)>;

/// (||dD/dX_hat||_2 - 1)^2 over all coordinates of all parts, recorded on the
/// active tape so it can be differentiated with respect to the
/// discriminator. Every tensor in `x_hat` must require grad.
Tensor gradient_penalty(const NodeTensors& x_hat, const PartScorer& score);
Tensor gradient_penalty(const NodeTensors& x_hat, const PartTree& tree, const DiscriminatorParams& d,
                        const DiscriminatorConfig& cfg);
float gradient_penalty(const PartCloudSet& x_hat, const PartTree& tree, const DiscriminatorParams& d,
                       const DiscriminatorConfig& cfg);

struct TrainState {
  ModelParams model;
  AdamState gen_opt;
  AdamState disc_opt;
  std::mt19937_64 rng;
};

TrainState init_train_state(const SemanticVocab& vocab, const TrainConfig& cfg);

struct DStepResult {
  double d_loss = 0;
  double gp = 0;
  double w_est = 0;  // mean D(real) - D(fake)
};

/// One discriminator update on `batch` (fakes are generated without
/// gradients to the generator).
DStepResult d_step(const std::vector<TrainItem>& batch, TrainState& st, const TrainConfig& cfg);
/// One generator update minimizing -mean D(G(z,T),T).
double g_step(const std::vector<const PartTree*>& trees, TrainState& st, const TrainConfig& cfg);

struct TrainLogRecord {
  std::int64_t step = 0;
  double d_loss = 0;
  double g_loss = 0;
  double gp = 0;
  double w_est = 0;

  nlohmann::ordered_json to_json() const;
};

struct TrainOptions {
  /// When set: log.jsonl, periodic ckpt_<step>.ckpt, final.ckpt, and a
  /// diagnostic dump on failure are written here.
  std::filesystem::path out_dir;
  std::function<void(const TrainLogRecord&)> on_record;
};

struct TrainResult {
  ModelParams model;
  std::vector<TrainLogRecord> log;
};

/// Repeats n_critic d_steps then one g_step, cfg.steps times.
TrainResult train(const std::vector<TrainItem>& data, const SemanticVocab& vocab, const TrainConfig& cfg,
                  const TrainOptions& opts = {});

}  // namespace pt2pc
