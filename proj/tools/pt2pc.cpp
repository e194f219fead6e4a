// pt2pc: synth, train, generate, eval and inspect subcommands.

#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <mutex>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "pt2pc/dataset.hpp"
#include "pt2pc/error.hpp"
#include "pt2pc/features.hpp"
#include "pt2pc/generator.hpp"
#include "pt2pc/metrics.hpp"
#include "pt2pc/params.hpp"
#include "pt2pc/trainer.hpp"

#ifndef PT2PC_VERSION
#define PT2PC_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;
using namespace pt2pc;

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string hash_file(const fs::path& p) { return hex64(fnv1a64(read_file(p))); }

// Hash of every regular file below `dir`, visited in sorted path order.
std::string hash_tree(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::string acc;
  for (const auto& f : files) acc += fs::relative(f, dir).generic_string() + ":" + hash_file(f) + "\n";
  return hex64(fnv1a64(acc));
}

struct Manifest {
  ojson j;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  Manifest(const std::string& command, const std::vector<std::string>& argv, std::uint64_t seed) {
    j["command"] = command;
    j["argv"] = argv;
    j["seed"] = seed;
    j["version"] = PT2PC_VERSION;
    j["config"] = ojson::object();
    j["inputs"] = ojson::object();
  }
  void write(const fs::path& path) {
    j["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_file(path, j.dump(2) + "\n");
  }
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<std::string> templates_of(const Dataset& ds, const std::string& split) {
  if (split == "train") return ds.split.train_templates;
  if (split == "test") return ds.split.test_templates;
  if (split == "all") {
    std::vector<std::string> all;
    for (const auto& [tid, ids] : ds.by_template) all.push_back(tid);
    return all;
  }
  fail(ErrorCode::kInvalidArgument, "unknown split '" + split + "' (expected train, test or all)");
}

// ---- synth --------------------------------------------------------------------

struct SynthArgs {
  std::string category = "table";
  int templates = 20;
  int shapes = 10;
  int points = 1000;
  double ratio = 0.75;
  std::uint64_t seed = 0;
  std::string out;
};

void cmd_synth(const SynthArgs& a, Manifest& man) {
  SynthConfig cfg;
  cfg.category = parse_category(a.category);
  cfg.n_templates = a.templates;
  cfg.shapes_per_template = a.shapes;
  cfg.points_per_part = a.points;
  cfg.seed = a.seed;
  cfg.split_ratio = a.ratio;
  const Dataset ds = synth(cfg, a.out);
  man.j["config"] = {{"category", a.category}, {"templates", a.templates}, {"shapes_per_template", a.shapes},
                     {"points_per_part", a.points}, {"split_ratio", a.ratio}};
  man.j["outputs"] = {{"dataset", hash_tree(a.out)}};
  man.write(fs::path(a.out) / "manifest.json");
  std::cout << "wrote " << ds.shapes.size() << " shapes (" << ds.by_template.size() << " templates) to " << a.out
            << "\n";
}

// ---- train --------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string out;
  int steps = 0;
  int ncritic = 10;
  float lambda_gp = 1.0f;
  int zdim = 256;
  int batch = 8;
  std::uint64_t seed = 0;
  bool disable_struct = false;
  bool disable_whole = false;
  int pc_hidden = 1024;
  int tree_feat = 256;
  std::vector<int> pc_widths{64, 128, 128, 1024};
  int shape_points = 2048;
  float lr = 1e-4f;
  int checkpoint_every = 500;
  bool quiet = false;
};

void cmd_train(const TrainArgs& a, Manifest& man) {
  const Dataset ds = load_dataset(a.data);
  TrainConfig cfg = default_train_config(ds.vocab.size());
  cfg.n_critic = a.ncritic;
  cfg.lambda_gp = a.lambda_gp;
  cfg.steps = a.steps;
  cfg.batch = a.batch;
  cfg.seed = a.seed;
  cfg.checkpoint_every = a.checkpoint_every;
  cfg.adam.lr = a.lr;
  cfg.gen.feat = a.zdim;
  cfg.gen.z_dim = a.zdim;
  cfg.gen.pc_hidden = a.pc_hidden;
  cfg.gen.points_per_part = ds.points_per_part;
  cfg.gen.shape_points = a.shape_points;
  cfg.disc.tree_feat = a.tree_feat;
  require(a.pc_widths.size() == 4, ErrorCode::kInvalidArgument, "--pc-widths takes exactly 4 values");
  std::copy(a.pc_widths.begin(), a.pc_widths.end(), cfg.disc.pc_widths.begin());
  cfg.disc.shape_points = a.shape_points;
  cfg.disc.use_struct = !a.disable_struct;
  cfg.disc.use_whole = !a.disable_whole;
  cfg.validate();

  std::vector<TrainItem> items;
  for (const auto* s : ds.shapes_of(ds.split.train_templates)) items.push_back({&s->tree, &s->parts});
  require(!items.empty(), ErrorCode::kInvalidArgument, "dataset has no training shapes");

  TrainOptions opts;
  opts.out_dir = a.out;
  if (!a.quiet)
    opts.on_record = [&](const TrainLogRecord& r) {
      if (r.step % 10 == 0 || r.step == cfg.steps) std::cerr << r.to_json().dump() << "\n";
    };
  man.j["config"] = cfg.to_json();
  man.j["inputs"] = {{"dataset", hash_tree(a.data)}};
  const TrainResult res = train(items, ds.vocab, cfg, opts);
  man.j["outputs"] = {{"final.ckpt", hash_file(fs::path(a.out) / "final.ckpt")},
                      {"log.jsonl", hash_file(fs::path(a.out) / "log.jsonl")}};
  man.write(fs::path(a.out) / "manifest.json");
  std::cout << "trained " << res.model.step << " generator steps; checkpoint " << (fs::path(a.out) / "final.ckpt").string()
            << "\n";
}

// ---- generate -------------------------------------------------------------------

struct GenerateArgs {
  std::string ckpt;
  std::vector<std::string> trees;
  std::string data;
  std::string split = "test";
  int num = 1;
  std::uint64_t seed = 0;
  bool fix_z = false;
  bool mesh = false;
  int subdivisions = 13;
  int workers = 1;
  std::string out;
};

void cmd_generate(const GenerateArgs& a, Manifest& man) {
  const ModelParams model = ModelParams::from_checkpoint(load_checkpoint(a.ckpt));
  std::vector<std::pair<std::string, PartTree>> conds;
  for (const auto& t : a.trees) conds.emplace_back(fs::path(t).stem().string(), parse_tree(read_file(t), model.vocab));
  std::optional<Dataset> ds;
  if (!a.data.empty()) {
    ds = load_dataset(a.data);
    for (const auto& tid : templates_of(*ds, a.split)) conds.emplace_back(tid, ds->shape(ds->by_template.at(tid).front()).tree);
  }
  require(!conds.empty(), ErrorCode::kInvalidArgument, "generate: give --tree files or --data");
  require(a.num >= 1, ErrorCode::kInvalidArgument, "generate: --num must be >= 1");

  // With --fix-z, sample i uses the same latent code for every tree.
  auto latent = [&](const std::string& key, int i) {
    std::seed_seq seq = a.fix_z ? std::seed_seq{a.seed, std::uint64_t{0x7a}, static_cast<std::uint64_t>(i)}
                                : std::seed_seq{a.seed, fnv1a64(key), static_cast<std::uint64_t>(i)};
    std::uint64_t s[1];
    seq.generate(s, s + 1);
    std::mt19937_64 rng(s[0]);
    return sample_latent(model.gen_cfg.z_dim, rng);
  };

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto work = [&]() {
    try {
      for (std::size_t c = next++; c < conds.size(); c = next++) {
        const auto& [key, tree] = conds[c];
        for (int i = 0; i < a.num; ++i) {
          const Tensor z = latent(key, i);
          const fs::path dir = fs::path(a.out) / key / ("sample_" + std::to_string(i));
          const GeneratedShape g = generate(tree, z, model.gen, model.gen_cfg);
          for (const auto& [leaf, pc] : g.parts) save_pc3f(dir / "parts" / (std::to_string(leaf) + ".pc3f"), pc);
          save_pc3f(dir / "shape.pc3f", g.shape);
          write_file(dir / "tree.json", serialize_tree(tree));
          if (a.mesh)
            for (const auto& [leaf, m] : generate_mesh(tree, z, model.gen, model.gen_cfg, a.subdivisions))
              write_file(dir / "mesh" / (std::to_string(leaf) + ".obj"), encode_obj(m));
        }
      }
    } catch (...) {
      std::lock_guard lock(failure_mu);
      if (!failure) failure = std::current_exception();
    }
  };
  const int workers = std::max(1, std::min<int>(a.workers, static_cast<int>(conds.size())));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  man.j["config"] = {{"num", a.num}, {"fix_z", a.fix_z}, {"mesh", a.mesh}, {"subdivisions", a.subdivisions},
                     {"split", a.split}};
  man.j["inputs"]["ckpt"] = hash_file(a.ckpt);
  for (const auto& t : a.trees) man.j["inputs"][t] = hash_file(t);
  if (!a.data.empty()) man.j["inputs"]["dataset"] = hash_tree(a.data);
  man.write(fs::path(a.out) / "manifest.json");
  std::cout << "generated " << a.num << " sample(s) for " << conds.size() << " tree(s) in " << a.out << "\n";
}

// ---- eval -----------------------------------------------------------------------

struct EvalArgs {
  std::string ckpt;
  std::string data;
  std::string split = "test";
  std::string metrics = "s_cov,p_cov,s_div,p_div,fpd,his";
  int n_gen = 100;
  int n_div = 10;
  int n_fpd = 0;
  std::string extractor;
  std::string save_extractor;
  int extractor_epochs = 40;
  std::uint64_t seed = 0;
  int workers = 1;
  std::string out = "report.json";
  bool ground_truth = false;
  int shape_points = 2048;
};

void cmd_eval(const EvalArgs& a, Manifest& man) {
  require(a.ground_truth != !a.ckpt.empty(), ErrorCode::kInvalidArgument, "eval: give exactly one of --ckpt or --ground-truth");
  const Dataset ds = load_dataset(a.data);
  std::optional<ModelParams> model;
  if (!a.ground_truth) {
    model = ModelParams::from_checkpoint(load_checkpoint(a.ckpt));
    require(model->vocab == ds.vocab, ErrorCode::kVocabMismatch, "model and dataset vocabularies differ");
  }
  const std::size_t N = static_cast<std::size_t>(model ? model->gen_cfg.shape_points : a.shape_points);
  EvalConfig cfg;
  const auto names = split_list(a.metrics);
  cfg.metrics = {names.begin(), names.end()};
  cfg.n_gen = a.n_gen;
  cfg.n_div = a.n_div;
  cfg.n_fpd = a.n_fpd;
  cfg.seed = a.seed;
  cfg.workers = a.workers;

  std::unique_ptr<PointNetExtractor> fx;
  if (cfg.metrics.count("fpd")) {
    if (!a.extractor.empty()) {
      fx = std::make_unique<PointNetExtractor>(PointNetExtractor::from_checkpoint(load_checkpoint(a.extractor)));
      man.j["inputs"]["extractor"] = hash_file(a.extractor);
    } else {
      // Template classifier over every shape of the dataset.
      std::vector<PointCloud> clouds;
      std::vector<int> labels;
      int label = 0;
      for (const auto& [tid, ids] : ds.by_template) {
        for (const auto& sid : ids) {
          clouds.push_back(downsample(ds.shape(sid).parts, N));
          labels.push_back(label);
        }
        ++label;
      }
      ExtractorConfig ec;
      ec.seed = a.seed;
      ec.epochs = a.extractor_epochs;
      fx = std::make_unique<PointNetExtractor>(
          train_extractor(clouds, labels, label, ec, "template-classifier:" + ds.category));
      if (!a.save_extractor.empty()) save_checkpoint(a.save_extractor, fx->to_checkpoint());
    }
  }
  const ConditionSampler sampler = model ? model_sampler(*model, a.seed) : ground_truth_sampler(ds);
  const MetricReport report = evaluate(sampler, ds, templates_of(ds, a.split), N, cfg, fx.get());
  write_file(a.out, report.serialize());

  man.j["config"] = {{"metrics", a.metrics}, {"split", a.split}, {"n_gen", a.n_gen}, {"n_div", a.n_div},
                     {"n_fpd", a.n_fpd}, {"extractor_epochs", a.extractor_epochs}};
  if (model) man.j["inputs"]["ckpt"] = hash_file(a.ckpt);
  man.j["inputs"]["dataset"] = hash_tree(a.data);
  man.j["outputs"] = {{"report", hash_file(a.out)}};
  man.write(a.out + ".manifest.json");
  std::cout << report.serialize();
}

// ---- inspect --------------------------------------------------------------------

void inspect_tree(const PartTree& t, std::ostream& os) {
  std::map<int, int> depth;
  for (int id : iter_top_down(t)) {
    const int p = t.parent(id);
    depth[id] = p < 0 ? 0 : depth[p] + 1;
    const PartNode& n = t.node(id);
    os << std::string(static_cast<std::size_t>(2 * depth[id]), ' ') << t.vocab().label(n.sem) << "#" << n.ordinal
       << " (id " << id << ")\n";
  }
  os << t.size() << " nodes, " << t.num_leaves() << " leaves\n";
}

void cmd_inspect(const std::string& path, const std::string& manifest_path, Manifest& man) {
  const fs::path p(path);
  std::ostringstream os;
  if (fs::is_directory(p)) {
    const Dataset ds = load_dataset(p);
    os << "dataset " << p.string() << ": category " << ds.category << ", source " << ds.source << "\n"
       << ds.shapes.size() << " shapes, " << ds.by_template.size() << " templates (" << ds.split.train_templates.size()
       << " train / " << ds.split.test_templates.size() << " test), " << ds.points_per_part << " points per part\n";
    for (const auto& [tid, ids] : ds.by_template)
      os << "  " << tid << ": " << ids.size() << " shapes, " << ds.shape(ids.front()).tree.num_leaves() << " leaves\n";
  } else {
    const std::string bytes = read_file(p);
    if (bytes.rfind("PT2PCCKP", 0) == 0) {
      const Checkpoint ck = decode_checkpoint(bytes);
      os << "checkpoint " << p.string() << "\n" << ck.config.dump(2) << "\n";
      std::size_t total = 0;
      for (const auto& t : ck.tensors) {
        os << "  " << t.name << " [" << t.tensor.rows() << "," << t.tensor.cols() << "]\n";
        total += t.tensor.size();
      }
      os << ck.tensors.size() << " tensors, " << total << " parameters\n";
    } else if (bytes.rfind("PC3F", 0) == 0) {
      const PointCloud pc = decode_pc3f(bytes);
      float lo[3] = {INFINITY, INFINITY, INFINITY}, hi[3] = {-INFINITY, -INFINITY, -INFINITY};
      for (std::size_t i = 0; i < pc.size(); ++i)
        for (int k = 0; k < 3; ++k) {
          lo[k] = std::min(lo[k], pc.point(i)[static_cast<std::size_t>(k)]);
          hi[k] = std::max(hi[k], pc.point(i)[static_cast<std::size_t>(k)]);
        }
      os << "point cloud " << p.string() << ": " << pc.size() << " points";
      if (!pc.empty())
        os << ", bounds [" << lo[0] << "," << lo[1] << "," << lo[2] << "] - [" << hi[0] << "," << hi[1] << "," << hi[2]
           << "]";
      os << "\n";
    } else {
      inspect_tree(parse_tree(bytes), os);
    }
    man.j["inputs"][path] = hex64(fnv1a64(bytes));
  }
  std::cout << os.str();
  if (!manifest_path.empty()) man.write(manifest_path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Part-tree conditioned point-cloud generation"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  auto add_seed = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "Random seed")->envname("PT2PC_SEED");
  };

  SynthArgs sa;
  auto* synth_cmd = app.add_subcommand("synth", "Write a procedural part-annotated dataset");
  synth_cmd->add_option("--category", sa.category, "table, chair or lamp")->capture_default_str();
  synth_cmd->add_option("--templates", sa.templates, "Number of symbolic templates")->capture_default_str();
  synth_cmd->add_option("--shapes-per-template", sa.shapes, "Shapes per template")->capture_default_str();
  synth_cmd->add_option("--points-per-part", sa.points, "Surface points per leaf part")->capture_default_str();
  synth_cmd->add_option("--split-ratio", sa.ratio, "Fraction of templates used for training")->capture_default_str();
  synth_cmd->add_option("--out", sa.out, "Output directory")->required();
  add_seed(synth_cmd);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train generator and discriminator");
  train_cmd->add_option("--data", ta.data, "Dataset directory")->required();
  train_cmd->add_option("--out", ta.out, "Checkpoint and log directory")->required();
  train_cmd->add_option("--steps", ta.steps, "Generator steps")->capture_default_str();
  train_cmd->add_option("--ncritic", ta.ncritic, "Discriminator steps per generator step")->capture_default_str();
  train_cmd->add_option("--lambda-gp", ta.lambda_gp, "Gradient penalty weight")->capture_default_str();
  train_cmd->add_option("--zdim", ta.zdim, "Latent and feature width")->capture_default_str();
  train_cmd->add_option("--batch", ta.batch, "Trees per batch")->capture_default_str();
  train_cmd->add_option("--pc-hidden", ta.pc_hidden, "Hidden width of the part decoder")->capture_default_str();
  train_cmd->add_option("--tree-feat", ta.tree_feat, "Discriminator tree feature width")->capture_default_str();
  train_cmd->add_option("--pc-widths", ta.pc_widths, "Discriminator PointNet widths (4 values)")->expected(4);
  train_cmd->add_option("--shape-points", ta.shape_points, "N, points in the downsampled shape")->capture_default_str();
  train_cmd->add_option("--lr", ta.lr, "Adam learning rate")->capture_default_str();
  train_cmd->add_option("--checkpoint-every", ta.checkpoint_every, "Checkpoint interval")->capture_default_str();
  auto* ds_flag = train_cmd->add_flag("--disable-struct", ta.disable_struct, "Drop the structural discriminator head");
  auto* dw_flag = train_cmd->add_flag("--disable-whole", ta.disable_whole, "Drop the whole-shape discriminator head");
  ds_flag->excludes(dw_flag);
  train_cmd->add_flag("--quiet", ta.quiet, "Do not echo log records");
  add_seed(train_cmd);

  GenerateArgs ga;
  auto* gen_cmd = app.add_subcommand("generate", "Sample part point clouds for part trees");
  gen_cmd->add_option("--ckpt", ga.ckpt, "Model checkpoint")->required();
  gen_cmd->add_option("--tree", ga.trees, "tree.json condition(s)");
  gen_cmd->add_option("--data", ga.data, "Use one tree per template of this dataset");
  gen_cmd->add_option("--split", ga.split, "train, test or all")->capture_default_str();
  gen_cmd->add_option("--num", ga.num, "Samples per tree")->capture_default_str();
  gen_cmd->add_flag("--fix-z", ga.fix_z, "Share latent code i across all trees");
  gen_cmd->add_flag("--mesh", ga.mesh, "Also write deformed-cube part meshes");
  gen_cmd->add_option("--subdivisions", ga.subdivisions, "Cube grid per face for --mesh")->capture_default_str();
  gen_cmd->add_option("--workers", ga.workers, "Parallel workers over trees")->capture_default_str();
  gen_cmd->add_option("--out", ga.out, "Output directory")->required();
  add_seed(gen_cmd);

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Compute coverage, diversity, fpd and his metrics");
  eval_cmd->add_option("--ckpt", ea.ckpt, "Model checkpoint");
  eval_cmd->add_flag("--ground-truth", ea.ground_truth, "Evaluate the dataset's own shapes instead of a model");
  eval_cmd->add_option("--shape-points", ea.shape_points, "N for --ground-truth runs")->capture_default_str();
  eval_cmd->add_option("--data", ea.data, "Dataset directory")->required();
  eval_cmd->add_option("--split", ea.split, "train, test or all")->capture_default_str();
  eval_cmd->add_option("--metrics", ea.metrics, "Comma-separated metric list")->capture_default_str();
  eval_cmd->add_option("--n-gen", ea.n_gen, "Samples per condition")->capture_default_str();
  eval_cmd->add_option("--n-div", ea.n_div, "Samples per condition for diversity")->capture_default_str();
  eval_cmd->add_option("--n-fpd", ea.n_fpd, "Generated clouds for fpd (0: one per real)")->capture_default_str();
  eval_cmd->add_option("--extractor", ea.extractor, "Feature extractor checkpoint");
  eval_cmd->add_option("--save-extractor", ea.save_extractor, "Save the extractor trained for this run");
  eval_cmd->add_option("--extractor-epochs", ea.extractor_epochs, "Epochs when training an extractor")
      ->capture_default_str();
  eval_cmd->add_option("--workers", ea.workers, "Parallel workers over conditions")->capture_default_str();
  eval_cmd->add_option("--out", ea.out, "Report path")->capture_default_str();
  add_seed(eval_cmd);

  std::string inspect_path, inspect_manifest;
  auto* inspect_cmd = app.add_subcommand("inspect", "Summarize a tree, point cloud, checkpoint or dataset");
  inspect_cmd->add_option("path", inspect_path, "File or dataset directory")->required();
  inspect_cmd->add_option("--manifest", inspect_manifest, "Write a run manifest here");

  CLI11_PARSE(app, argc, argv);

  const std::vector<std::string> args(argv, argv + argc);
  try {
    if (synth_cmd->parsed()) {
      sa.seed = seed;
      Manifest man("synth", args, seed);
      cmd_synth(sa, man);
    } else if (train_cmd->parsed()) {
      ta.seed = seed;
      Manifest man("train", args, seed);
      cmd_train(ta, man);
    } else if (gen_cmd->parsed()) {
      ga.seed = seed;
      Manifest man("generate", args, seed);
      cmd_generate(ga, man);
    } else if (eval_cmd->parsed()) {
      ea.seed = seed;
      Manifest man("eval", args, seed);
      cmd_eval(ea, man);
    } else if (inspect_cmd->parsed()) {
      Manifest man("inspect", args, 0);
      cmd_inspect(inspect_path, inspect_manifest, man);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << error_code_name(e.code()) << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
