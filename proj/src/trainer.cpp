#include "pt2pc/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "pt2pc/error.hpp"

namespace pt2pc {

void TrainConfig::validate() const {
  require(n_critic >= 1, ErrorCode::kInvalidArgument, "train: n_critic must be >= 1");
  require(lambda_gp >= 0.0f && std::isfinite(lambda_gp), ErrorCode::kInvalidArgument, "train: lambda_gp must be >= 0");
  require(steps >= 0, ErrorCode::kInvalidArgument, "train: steps must be >= 0");
  require(batch >= 1, ErrorCode::kInvalidArgument, "train: batch must be >= 1");
  require(checkpoint_every >= 1, ErrorCode::kInvalidArgument, "train: checkpoint interval must be >= 1");
  require(adam.lr > 0.0f, ErrorCode::kInvalidArgument, "train: learning rate must be positive");
  gen.validate();
  disc.validate();
  require(gen.num_sem == disc.num_sem, ErrorCode::kVocabMismatch, "train: generator and discriminator vocabularies differ");
  require(gen.shape_points == disc.shape_points, ErrorCode::kInvalidArgument,
          "train: generator and discriminator disagree on N");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"n_critic", n_critic},
          {"lambda_gp", lambda_gp},
          {"steps", steps},
          {"batch", batch},
          {"seed", seed},
          {"checkpoint_every", checkpoint_every},
          {"adam", {{"lr", adam.lr}, {"beta1", adam.beta1}, {"beta2", adam.beta2}, {"eps", adam.eps}}},
          {"gen", gen.to_json()},
          {"disc", disc.to_json()}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.n_critic = j.at("n_critic").get<int>();
  c.lambda_gp = j.at("lambda_gp").get<float>();
  c.steps = j.at("steps").get<int>();
  c.batch = j.at("batch").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.checkpoint_every = j.at("checkpoint_every").get<int>();
  const auto& a = j.at("adam");
  c.adam = {a.at("lr").get<float>(), a.at("beta1").get<float>(), a.at("beta2").get<float>(), a.at("eps").get<float>()};
  c.gen = GeneratorConfig::from_json(j.at("gen"));
  c.disc = DiscriminatorConfig::from_json(j.at("disc"));
  c.validate();
  return c;
}

TrainConfig default_train_config(int num_sem) {
  TrainConfig c;
  c.gen.num_sem = num_sem;
  c.disc.num_sem = num_sem;
  return c;
}

// ---- model container --------------------------------------------------------

Checkpoint ModelParams::to_checkpoint(const nlohmann::json& extra) const {
  Checkpoint ck;
  ck.config = {{"format", "pt2pc-model"},
               {"vocab", {{"category", vocab.category()}, {"labels", vocab.labels()}}},
               {"gen", gen_cfg.to_json()},
               {"disc", disc_cfg.to_json()},
               {"step", step}};
  if (!extra.empty()) ck.config["extra"] = extra;
  for (auto& t : gen.named()) ck.tensors.push_back(t);
  for (auto& t : disc.named()) ck.tensors.push_back(t);
  return ck;
}

ModelParams ModelParams::from_checkpoint(const Checkpoint& ckpt) {
  ModelParams m;
  try {
    require(ckpt.config.value("format", std::string()) == "pt2pc-model", ErrorCode::kBadCheckpoint,
            "checkpoint does not hold a PT2PC model");
    const auto& v = ckpt.config.at("vocab");
    m.vocab = SemanticVocab(v.at("category").get<std::string>(), v.at("labels").get<std::vector<std::string>>());
    m.gen_cfg = GeneratorConfig::from_json(ckpt.config.at("gen"));
    m.disc_cfg = DiscriminatorConfig::from_json(ckpt.config.at("disc"));
    m.step = ckpt.config.at("step").get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kBadCheckpoint, std::string("checkpoint config: ") + e.what());
  }
  m.gen = GeneratorParams::from_named(ckpt);
  m.disc = DiscriminatorParams::from_named(ckpt);
  require(m.gen.cube.rows() == m.gen_cfg.points_per_part, ErrorCode::kBadCheckpoint,
          "checkpoint cube size does not match its config");
  return m;
}

namespace {

std::uint64_t derived_seed(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{seed, stream};
  std::uint64_t out[1];
  seq.generate(out, out + 1);
  return out[0];
}

}  // namespace

ModelParams init_model(const SemanticVocab& vocab, const TrainConfig& cfg) {
  cfg.validate();
  require(cfg.gen.num_sem == vocab.size(), ErrorCode::kVocabMismatch,
          "config vocabulary size " + std::to_string(cfg.gen.num_sem) + " differs from dataset's " +
              std::to_string(vocab.size()));
  ModelParams m;
  m.vocab = vocab;
  m.gen_cfg = cfg.gen;
  m.disc_cfg = cfg.disc;
  m.gen = init_generator(cfg.gen, derived_seed(cfg.seed, 1));
  m.disc = init_discriminator(cfg.disc, derived_seed(cfg.seed, 2));
  return m;
}

TrainState init_train_state(const SemanticVocab& vocab, const TrainConfig& cfg) {
  return TrainState{init_model(vocab, cfg), {}, {}, std::mt19937_64(derived_seed(cfg.seed, 3))};
}

// ---- penalty ------------------------------------------------------------------

InterpolatedSample interpolate_parts(const PartCloudSet& real, const PartCloudSet& fake, float alpha) {
  require(real.size() == fake.size(), ErrorCode::kLeafMismatch, "interpolation: part sets cover different leaves");
  InterpolatedSample out;
  out.alpha = alpha;
  const float beta = 1.0f - alpha;
  for (const auto& [id, r] : real) {
    auto it = fake.find(id);
    require(it != fake.end(), ErrorCode::kLeafMismatch, "interpolation: fake set is missing leaf " + std::to_string(id));
    require(it->second.size() == r.size(), ErrorCode::kLeafMismatch,
            "interpolation: leaf " + std::to_string(id) + " has different point counts");
    std::vector<float> xyz(r.raw().size());
    for (std::size_t i = 0; i < xyz.size(); ++i) xyz[i] = alpha * r.raw()[i] + beta * it->second.raw()[i];
    out.x_hat.emplace(id, PointCloud(std::move(xyz)));
  }
  return out;
}

Tensor gradient_penalty(const NodeTensors& x_hat, const PartScorer& score) {
  Tape* tape = active_tape();
  require(tape != nullptr, ErrorCode::kInvalidArgument, "gradient_penalty needs an active tape");
  std::vector<Tensor> inputs;
  for (const auto& [id, x] : x_hat) {
    require(x.requires_grad(), ErrorCode::kInvalidArgument, "gradient_penalty: interpolated parts must require grad");
    inputs.push_back(x);
  }
  const Tensor y = score(x_hat);
  const std::vector<Tensor> grads = tape->grad(y, inputs, true);
  Tensor sq = Tensor::scalar(0.0f);
  for (const Tensor& g : grads) {
    for (float v : g.values())
      require(std::isfinite(v), ErrorCode::kNonFinite, "gradient_penalty: non-finite gradient");
    sq = add(sq, sum(mul(g, g)));
  }
  return pow(add_scalar(sqrt(sq), -1.0f), 2.0f);
}

Tensor gradient_penalty(const NodeTensors& x_hat, const PartTree& tree, const DiscriminatorParams& d,
                        const DiscriminatorConfig& cfg) {
  return gradient_penalty(x_hat, [&](const NodeTensors& x) { return discriminate(x, tree, d, cfg).y; });
}

float gradient_penalty(const PartCloudSet& x_hat, const PartTree& tree, const DiscriminatorParams& d,
                       const DiscriminatorConfig& cfg) {
  Tape tape;
  TapeScope scope(tape);
  NodeTensors xs = to_tensors(x_hat);
  for (auto& [id, x] : xs) x.set_requires_grad(true);
  return gradient_penalty(xs, tree, d, cfg).item();
}

// ---- steps ----------------------------------------------------------------------

namespace {

void accumulate(std::vector<std::vector<float>>& acc, const std::vector<Tensor>& grads) {
  if (acc.empty()) {
    for (const Tensor& g : grads) acc.emplace_back(g.values().begin(), g.values().end());
    return;
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const auto v = grads[i].values();
    for (std::size_t k = 0; k < v.size(); ++k) acc[i][k] += v[k];
  }
}

void average(std::vector<std::vector<float>>& acc, std::size_t n) {
  const float inv = 1.0f / static_cast<float>(n);
  for (auto& g : acc)
    for (float& v : g) v *= inv;
}

}  // namespace

DStepResult d_step(const std::vector<TrainItem>& batch, TrainState& st, const TrainConfig& cfg) {
  require(!batch.empty(), ErrorCode::kInvalidArgument, "d_step: empty batch");
  ModelParams& m = st.model;
  std::vector<Tensor> params = m.disc.trainable();
  std::vector<std::vector<float>> acc;
  std::uniform_real_distribution<float> unif(0.0f, 1.0f);
  DStepResult r;

  for (const TrainItem& item : batch) {
    const Tensor z = sample_latent(m.gen_cfg.z_dim, st.rng);
    const float alpha = unif(st.rng);
    NodeTensors fake;
    {
      NoGradScope no_grad;
      fake = generate_parts(*item.tree, z, m.gen, m.gen_cfg);
    }
    const PartCloudSet fake_pc = to_part_clouds(fake);
    const InterpolatedSample interp = interpolate_parts(*item.real, fake_pc, alpha);

    Tape tape;
    TapeScope scope(tape);
    const Tensor y_real = discriminate(to_tensors(*item.real), *item.tree, m.disc, m.disc_cfg).y;
    const Tensor y_fake = discriminate(fake, *item.tree, m.disc, m.disc_cfg).y;
    NodeTensors x_hat = to_tensors(interp.x_hat);
    for (auto& [id, x] : x_hat) x.set_requires_grad(true);
    const Tensor gp = gradient_penalty(x_hat, *item.tree, m.disc, m.disc_cfg);
    const Tensor loss = add(sub(y_fake, y_real), scale(gp, cfg.lambda_gp));
    require(std::isfinite(loss.item()), ErrorCode::kNonFinite, "d_step: non-finite loss");
    accumulate(acc, tape.grad(loss, params, false));

    r.d_loss += loss.item();
    r.gp += gp.item();
    r.w_est += static_cast<double>(y_real.item()) - y_fake.item();
  }
  average(acc, batch.size());
  adam_step(params, acc, st.disc_opt, cfg.adam);
  const double n = static_cast<double>(batch.size());
  r.d_loss /= n;
  r.gp /= n;
  r.w_est /= n;
  return r;
}

double g_step(const std::vector<const PartTree*>& trees, TrainState& st, const TrainConfig& cfg) {
  require(!trees.empty(), ErrorCode::kInvalidArgument, "g_step: empty batch");
  ModelParams& m = st.model;
  std::vector<Tensor> params = m.gen.trainable();
  std::vector<std::vector<float>> acc;
  double total = 0.0;
  for (const PartTree* tree : trees) {
    const Tensor z = sample_latent(m.gen_cfg.z_dim, st.rng);
    Tape tape;
    TapeScope scope(tape);
    const NodeTensors parts = generate_parts(*tree, z, m.gen, m.gen_cfg);
    const Tensor loss = scale(discriminate(parts, *tree, m.disc, m.disc_cfg).y, -1.0f);
    require(std::isfinite(loss.item()), ErrorCode::kNonFinite, "g_step: non-finite loss");
    accumulate(acc, tape.grad(loss, params, false));
    total += loss.item();
  }
  average(acc, trees.size());
  adam_step(params, acc, st.gen_opt, cfg.adam);
  return total / static_cast<double>(trees.size());
}

// ---- loop ---------------------------------------------------------------------------

nlohmann::ordered_json TrainLogRecord::to_json() const {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["d_loss"] = d_loss;
  j["g_loss"] = g_loss;
  j["gp"] = gp;
  j["w_est"] = w_est;
  return j;
}

namespace {

std::string ckpt_name(std::int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ckpt_%06lld.ckpt", static_cast<long long>(step));
  return buf;
}

void dump_diagnostics(const std::filesystem::path& dir, const TrainState& st, const TrainConfig& cfg,
                      const std::vector<TrainLogRecord>& log, const std::string& phase, const Error& e) {
  nlohmann::ordered_json j;
  j["error"] = error_code_name(e.code());
  j["message"] = e.what();
  j["phase"] = phase;
  j["step"] = st.model.step;
  j["config"] = cfg.to_json();
  j["recent_log"] = nlohmann::ordered_json::array();
  const std::size_t from = log.size() > 20 ? log.size() - 20 : 0;
  for (std::size_t i = from; i < log.size(); ++i) j["recent_log"].push_back(log[i].to_json());
  write_file(dir / "diagnostic.json", j.dump(2) + "\n");
  save_checkpoint(dir / "diagnostic.ckpt", st.model.to_checkpoint());
}

}  // namespace

TrainResult train(const std::vector<TrainItem>& data, const SemanticVocab& vocab, const TrainConfig& cfg,
                  const TrainOptions& opts) {
  cfg.validate();
  require(!data.empty(), ErrorCode::kInvalidArgument, "train: empty dataset");
  for (const TrainItem& item : data)
    for (const auto& [id, pc] : *item.real)
      require(pc.size() == static_cast<std::size_t>(cfg.gen.points_per_part), ErrorCode::kPartSizeMismatch,
              "train: real parts have " + std::to_string(pc.size()) + " points but the generator emits " +
                  std::to_string(cfg.gen.points_per_part));
  TrainState st = init_train_state(vocab, cfg);
  TrainResult result;
  const bool to_disk = !opts.out_dir.empty();
  std::ofstream log_file;
  if (to_disk) {
    std::filesystem::create_directories(opts.out_dir);
    log_file.open(opts.out_dir / "log.jsonl", std::ios::binary | std::ios::trunc);
    require(log_file.good(), ErrorCode::kIo, "cannot write " + (opts.out_dir / "log.jsonl").string());
  }

  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  for (int s = 0; s < cfg.steps; ++s) {
    TrainLogRecord rec;
    std::string phase = "d_step";
    try {
      for (int c = 0; c < cfg.n_critic; ++c) {
        std::vector<TrainItem> batch;
        for (int b = 0; b < cfg.batch; ++b) batch.push_back(data[pick(st.rng)]);
        const DStepResult d = d_step(batch, st, cfg);
        rec.d_loss += d.d_loss;
        rec.gp += d.gp;
        rec.w_est += d.w_est;
      }
      phase = "g_step";
      std::vector<const PartTree*> trees;
      for (int b = 0; b < cfg.batch; ++b) trees.push_back(data[pick(st.rng)].tree);
      rec.g_loss = g_step(trees, st, cfg);
    } catch (const Error& e) {
      if (to_disk && e.code() == ErrorCode::kNonFinite) dump_diagnostics(opts.out_dir, st, cfg, result.log, phase, e);
      throw;
    }
    rec.d_loss /= cfg.n_critic;
    rec.gp /= cfg.n_critic;
    rec.w_est /= cfg.n_critic;
    rec.step = ++st.model.step;
    result.log.push_back(rec);
    if (opts.on_record) opts.on_record(rec);
    if (to_disk) {
      log_file << rec.to_json().dump() << '\n';
      log_file.flush();
      if (rec.step % cfg.checkpoint_every == 0)
        save_checkpoint(opts.out_dir / ckpt_name(rec.step), st.model.to_checkpoint({{"train", cfg.to_json()}}));
    }
  }
  if (to_disk) save_checkpoint(opts.out_dir / "final.ckpt", st.model.to_checkpoint({{"train", cfg.to_json()}}));
  result.model = std::move(st.model);
  return result;
}

}  // namespace pt2pc
