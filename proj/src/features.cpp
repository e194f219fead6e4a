#include "pt2pc/features.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "pt2pc/error.hpp"
#include "pt2pc/generator.hpp"

namespace pt2pc {

PointNetExtractor::PointNetExtractor(PointMlp trunk, Linear head, int input_points, std::string provenance)
    : trunk_(std::move(trunk)), head_(std::move(head)), input_points_(input_points), provenance_(std::move(provenance)) {}

PointCloud PointNetExtractor::prepare(const PointCloud& shape) const {
  require(!shape.empty(), ErrorCode::kBadPointCloud, "feature extractor: empty point cloud");
  if (shape.size() <= static_cast<std::size_t>(input_points_)) return shape;
  return gather(shape, downsample_indices(shape, static_cast<std::size_t>(input_points_)));
}

Tensor PointNetExtractor::logits(const PointCloud& shape) const {
  const PointCloud pc = prepare(shape);
  return head_(encode_points(trunk_, Tensor::from(static_cast<int>(pc.size()), 3, pc.raw())));
}

std::vector<float> PointNetExtractor::extract(const PointCloud& shape) const {
  NoGradScope no_grad;
  const PointCloud pc = prepare(shape);
  const Tensor f = encode_points(trunk_, Tensor::from(static_cast<int>(pc.size()), 3, pc.raw()));
  return {f.values().begin(), f.values().end()};
}

int PointNetExtractor::classify(const PointCloud& shape) const {
  NoGradScope no_grad;
  const auto v = logits(shape).values();
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

Checkpoint PointNetExtractor::to_checkpoint() const {
  Checkpoint ck;
  ck.config = {{"format", "pt2pc-extractor"}, {"input_points", input_points_}, {"provenance", provenance_}};
  for (int i = 0; i < 4; ++i) {
    ck.tensors.push_back({"fx.trunk" + std::to_string(i) + ".weight", trunk_[i].weight});
    ck.tensors.push_back({"fx.trunk" + std::to_string(i) + ".bias", trunk_[i].bias});
  }
  ck.tensors.push_back({"fx.head.weight", head_.weight});
  ck.tensors.push_back({"fx.head.bias", head_.bias});
  return ck;
}

PointNetExtractor PointNetExtractor::from_checkpoint(const Checkpoint& ckpt) {
  require(ckpt.config.value("format", std::string()) == "pt2pc-extractor", ErrorCode::kBadCheckpoint,
          "checkpoint does not hold a feature extractor");
  PointMlp trunk;
  for (int i = 0; i < 4; ++i)
    trunk[i] = Linear{ckpt.get("fx.trunk" + std::to_string(i) + ".weight").detach(),
                      ckpt.get("fx.trunk" + std::to_string(i) + ".bias").detach()};
  Linear head{ckpt.get("fx.head.weight").detach(), ckpt.get("fx.head.bias").detach()};
  return PointNetExtractor(std::move(trunk), std::move(head), ckpt.config.at("input_points").get<int>(),
                           ckpt.config.at("provenance").get<std::string>());
}

PointNetExtractor train_extractor(const std::vector<PointCloud>& clouds, const std::vector<int>& labels,
                                  int num_classes, const ExtractorConfig& cfg, const std::string& provenance) {
  require(!clouds.empty() && clouds.size() == labels.size(), ErrorCode::kInvalidArgument,
          "extractor: need one label per training cloud");
  require(num_classes >= 1, ErrorCode::kInvalidArgument, "extractor: need at least one class");
  for (int l : labels) require(l >= 0 && l < num_classes, ErrorCode::kInvalidArgument, "extractor: label out of range");

  std::seed_seq seq{cfg.seed, std::uint64_t{0xfe}};
  std::vector<std::uint64_t> seeds(6);
  seq.generate(seeds.begin(), seeds.end());
  PointMlp trunk;
  const int in[4] = {3, cfg.widths[0], cfg.widths[1], cfg.widths[2]};
  for (int i = 0; i < 4; ++i) trunk[i] = make_linear(in[i], cfg.widths[i], seeds[static_cast<std::size_t>(i)]);
  PointNetExtractor fx(std::move(trunk), make_linear(cfg.widths[3], num_classes, seeds[4]), cfg.input_points, provenance);

  std::vector<PointCloud> inputs;
  for (const auto& c : clouds) inputs.push_back(fx.prepare(c));

  std::vector<Tensor> params;
  for (const Linear& l : fx.trunk_) params.insert(params.end(), {l.weight, l.bias});
  params.insert(params.end(), {fx.head_.weight, fx.head_.bias});
  AdamConfig adam{cfg.lr, 0.9f, 0.999f, 1e-8f};
  AdamState state;
  std::mt19937_64 rng(seeds[5]);
  std::vector<std::size_t> order(inputs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int e = 0; e < cfg.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i : order) {
      Tape tape;
      TapeScope scope(tape);
      const Tensor loss = cross_entropy(fx.logits(inputs[i]), labels[i]);
      const std::vector<Tensor> grads = tape.grad(loss, params, false);
      std::vector<std::vector<float>> g;
      for (const Tensor& t : grads) g.emplace_back(t.values().begin(), t.values().end());
      adam_step(params, g, state, adam);
    }
  }
  return fx;
}

}  // namespace pt2pc
