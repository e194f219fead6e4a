#include "pt2pc/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

#include <Eigen/Dense>

#include "pt2pc/error.hpp"
#include "pt2pc/generator.hpp"

namespace pt2pc {

// ---- distances ----------------------------------------------------------------

namespace {

struct PartMatcher {
  const PartTree& tree;
  const PartCloudSet& x1;
  const PartCloudSet& x2;
  std::map<int, std::string> sig;

  double cost(int a, int b) {
    const PartNode& na = tree.node(a);
    if (na.is_leaf()) return emd(x1.at(a), x2.at(b));
    const PartNode& nb = tree.node(b);
    // Interchangeable siblings: same label and same labeled subtree shape.
    std::map<std::string, std::pair<std::vector<int>, std::vector<int>>> groups;
    for (int c : na.children) groups[sig.at(c)].first.push_back(c);
    for (int c : nb.children) groups[sig.at(c)].second.push_back(c);
    double total = 0.0;
    for (const auto& [key, g] : groups) {
      const auto& [ca, cb] = g;
      if (ca.size() == 1) {
        total += cost(ca[0], cb[0]);
        continue;
      }
      const std::size_t n = ca.size();
      std::vector<double> m(n * n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) m[i * n + j] = cost(ca[i], cb[j]);
      total += hungarian(CostMatrix(n, std::move(m))).total;
    }
    return total;
  }
};

void check_conforms(const PartCloudSet& x, const PartTree& tree, const char* which) {
  const auto leaves = tree.leaves();
  require(x.size() == leaves.size(), ErrorCode::kLeafMismatch,
          std::string(which) + " has " + std::to_string(x.size()) + " parts for " + std::to_string(leaves.size()) +
              " leaves");
  for (int l : leaves)
    require(x.count(l) == 1, ErrorCode::kLeafMismatch, std::string(which) + " is missing leaf " + std::to_string(l));
}

}  // namespace

double dist_part(const PartCloudSet& x1, const PartCloudSet& x2, const PartTree& tree) {
  check_conforms(x1, tree, "first part set");
  check_conforms(x2, tree, "second part set");
  PartMatcher m{tree, x1, x2, {}};
  for (const auto& [id, n] : tree.nodes()) m.sig[id] = subtree_signature(tree, id);
  return m.cost(tree.root(), tree.root()) / static_cast<double>(tree.num_leaves());
}

double dist_shape(const PartCloudSet& x1, const PartCloudSet& x2, std::size_t n) {
  const PointCloud u1 = union_cloud(x1), u2 = union_cloud(x2);
  require(u1.size() >= n && u2.size() >= n, ErrorCode::kInsufficientPoints,
          "insufficient points: need " + std::to_string(n) + ", have " + std::to_string(std::min(u1.size(), u2.size())));
  return emd(gather(u1, downsample_indices(u1, n)), gather(u2, downsample_indices(u2, n)));
}

double coverage(const std::vector<PartCloudSet>& reals, const Sampler& gen, int n_gen, const ShapeDistance& dist) {
  require(!reals.empty(), ErrorCode::kInvalidArgument, "coverage: no real shapes");
  require(n_gen >= 1, ErrorCode::kInvalidArgument, "coverage: n_gen must be >= 1");
  std::vector<PartCloudSet> samples;
  for (int i = 0; i < n_gen; ++i) samples.push_back(gen(i));
  double total = 0.0;
  for (const auto& r : reals) {
    double best = INFINITY;
    for (const auto& s : samples) best = std::min(best, dist(r, s));
    total += best;
  }
  return total / static_cast<double>(reals.size());
}

double diversity(const Sampler& gen, int n, const ShapeDistance& dist) {
  require(n >= 2, ErrorCode::kInvalidArgument, "diversity: n must be >= 2");
  std::vector<PartCloudSet> samples;
  for (int i = 0; i < n; ++i) samples.push_back(gen(i));
  double total = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) total += dist(samples[static_cast<std::size_t>(i)], samples[static_cast<std::size_t>(j)]);
  return total / (static_cast<double>(n) * n);
}

// ---- fpd ----------------------------------------------------------------------

namespace {

Eigen::MatrixXd to_matrix(const std::vector<std::vector<float>>& feats, std::size_t k) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(feats.size()), static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < feats.size(); ++i) {
    require(feats[i].size() == k, ErrorCode::kShapeMismatch, "fpd: feature vectors have different lengths");
    for (std::size_t j = 0; j < k; ++j) {
      require(std::isfinite(feats[i][j]), ErrorCode::kNonFinite, "fpd: non-finite feature");
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = feats[i][j];
    }
  }
  return m;
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (a + a.transpose()));
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double fpd(const std::vector<std::vector<float>>& real, const std::vector<std::vector<float>>& gen) {
  require(!real.empty() && !gen.empty(), ErrorCode::kInvalidArgument, "fpd: empty feature set");
  const std::size_t k = real[0].size();
  require(k >= 1, ErrorCode::kInvalidArgument, "fpd: empty feature vectors");
  require(gen[0].size() == k, ErrorCode::kShapeMismatch,
          "fpd: feature widths differ (" + std::to_string(k) + " vs " + std::to_string(gen[0].size()) + ")");
  require(real.size() > k && gen.size() > k, ErrorCode::kInvalidArgument,
          "fpd: need at least k+1 = " + std::to_string(k + 1) + " feature vectors per side");
  const Eigen::MatrixXd r = to_matrix(real, k), g = to_matrix(gen, k);
  const Eigen::RowVectorXd mr = r.colwise().mean(), mg = g.colwise().mean();
  const Eigen::MatrixXd cr = r.rowwise() - mr, cg = g.rowwise() - mg;
  const Eigen::MatrixXd sr = cr.transpose() * cr / static_cast<double>(r.rows() - 1);
  const Eigen::MatrixXd sg = cg.transpose() * cg / static_cast<double>(g.rows() - 1);
  // Tr((S_r S_g)^(1/2)) = Tr((S_r^(1/2) S_g S_r^(1/2))^(1/2)), the inner matrix being symmetric PSD.
  const Eigen::MatrixXd root_r = psd_sqrt(sr);
  const Eigen::MatrixXd inner = root_r * sg * root_r;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  const double tr_cross = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double d = (mr - mg).squaredNorm() + sr.trace() + sg.trace() - 2.0 * tr_cross;
  return std::max(d, 0.0);
}

// ---- tree edit distance ----------------------------------------------------------

namespace {

double edit_cost(const PartTree& ta, int a, const PartTree& tb, int b) {
  const PartNode& na = ta.node(a);
  const PartNode& nb = tb.node(b);
  if (na.sem != nb.sem) return static_cast<double>(ta.subtree_size(a) + tb.subtree_size(b));
  const std::size_t n = na.children.size(), m = nb.children.size();
  if (n == 0 && m == 0) return 0.0;
  // Rows: children of a, then m "unmatched" slots; columns: children of b, then n slots.
  const std::size_t dim = n + m;
  std::vector<double> c(dim * dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t j = 0; j < dim; ++j) {
      const bool ri = i < n, cj = j < m;
      double v = 0.0;
      if (ri && cj)
        v = edit_cost(ta, na.children[i], tb, nb.children[j]);
      else if (ri)
        v = static_cast<double>(ta.subtree_size(na.children[i]));
      else if (cj)
        v = static_cast<double>(tb.subtree_size(nb.children[j]));
      c[i * dim + j] = v;
    }
  return hungarian(CostMatrix(dim, std::move(c))).total;
}

}  // namespace

double tree_edit_cost(const PartTree& pred, const PartTree& cond) {
  require(pred.vocab() == cond.vocab(), ErrorCode::kVocabMismatch, "tree_edit_distance: trees use different vocabularies");
  return edit_cost(pred, pred.root(), cond, cond.root());
}

double tree_edit_distance(const PartTree& pred, const PartTree& cond) {
  return tree_edit_cost(pred, cond) / static_cast<double>(cond.size());
}

PartTree extract_tree(const PartTree& cond, const PartCloudSet& sample) {
  std::set<int> keep{cond.root()};
  for (const auto& [id, pc] : sample) {
    require(cond.contains(id) && cond.node(id).is_leaf(), ErrorCode::kUnlabeledSample,
            "sample part " + std::to_string(id) + " does not name a leaf of the condition tree");
    if (pc.empty()) continue;
    for (int n = id; n != -1; n = cond.parent(n)) keep.insert(n);
  }
  std::map<int, PartNode> nodes;
  for (int id : keep) {
    PartNode n = cond.node(id);
    n.ordinal = kUnsetOrdinal;
    std::erase_if(n.children, [&](int c) { return keep.count(c) == 0; });
    nodes.emplace(id, std::move(n));
  }
  return canonicalize(PartTree::from_nodes(cond.vocab(), cond.root(), std::move(nodes)));
}

double his_score(const std::vector<PartTree>& conditions,
                 const std::function<PartCloudSet(std::size_t cond, int index)>& gen, int n) {
  require(!conditions.empty(), ErrorCode::kInvalidArgument, "his_score: no conditions");
  require(n >= 1, ErrorCode::kInvalidArgument, "his_score: n must be >= 1");
  double total = 0.0;
  for (std::size_t c = 0; c < conditions.size(); ++c) {
    double sum = 0.0;
    for (int i = 0; i < n; ++i) sum += tree_edit_distance(extract_tree(conditions[c], gen(c, i)), conditions[c]);
    total += sum / n;
  }
  return total / static_cast<double>(conditions.size());
}

// ---- report ---------------------------------------------------------------------

namespace {

using ojson = nlohmann::ordered_json;

ojson metrics_json(const ConditionMetrics& m) {
  ojson j;
  auto put = [&](const char* key, const std::optional<double>& v) { j[key] = v ? ojson(*v) : ojson(nullptr); };
  put("s_cov", m.s_cov);
  put("p_cov", m.p_cov);
  put("s_div", m.s_div);
  put("p_div", m.p_div);
  put("his", m.his);
  return j;
}

ConditionMetrics metrics_from(const ojson& j) {
  auto get = [&](const char* key) -> std::optional<double> {
    const auto& v = j.at(key);
    if (v.is_null()) return std::nullopt;
    const double d = v.get<double>();
    require(d >= 0.0, ErrorCode::kInvalidArgument, std::string("report: negative ") + key);
    return d;
  };
  return {get("s_cov"), get("p_cov"), get("s_div"), get("p_div"), get("his")};
}

}  // namespace

void MetricReport::finalize() {
  using Field = std::optional<double> ConditionMetrics::*;
  for (Field f : {&ConditionMetrics::s_cov, &ConditionMetrics::p_cov, &ConditionMetrics::s_div,
                  &ConditionMetrics::p_div, &ConditionMetrics::his}) {
    double sum = 0.0;
    int count = 0;
    for (const auto& [tid, m] : per_condition)
      if (m.*f) {
        sum += *(m.*f);
        ++count;
      }
    aggregate.*f = count ? std::optional<double>(sum / count) : std::nullopt;
  }
}

std::string MetricReport::serialize() const {
  ojson j;
  j["per_condition"] = ojson::object();
  for (const auto& [tid, m] : per_condition) j["per_condition"][tid] = metrics_json(m);
  j["aggregate"] = metrics_json(aggregate);
  j["fpd"] = fpd ? ojson(*fpd) : ojson(nullptr);
  j["extractor"] = extractor;
  return j.dump(2) + "\n";
}

MetricReport MetricReport::parse(const std::string& text) {
  MetricReport r;
  try {
    const ojson j = ojson::parse(text);
    for (const auto& [tid, m] : j.at("per_condition").items()) r.per_condition[tid] = metrics_from(m);
    r.aggregate = metrics_from(j.at("aggregate"));
    if (!j.at("fpd").is_null()) r.fpd = j.at("fpd").get<double>();
    r.extractor = j.at("extractor").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kMalformedJson, std::string("metric report: ") + e.what());
  }
  return r;
}

// ---- evaluation -------------------------------------------------------------------

PartCloudSet sample_condition(const ModelParams& model, const PartTree& tree, const std::string& tid, int index,
                              std::uint64_t seed) {
  std::seed_seq seq{seed, fnv1a64(tid), static_cast<std::uint64_t>(index)};
  std::uint64_t s[1];
  seq.generate(s, s + 1);
  std::mt19937_64 rng(s[0]);
  const Tensor z = sample_latent(model.gen_cfg.z_dim, rng);
  NoGradScope no_grad;
  return to_part_clouds(generate_parts(tree, z, model.gen, model.gen_cfg));
}

ConditionSampler model_sampler(const ModelParams& model, std::uint64_t seed) {
  return [&model, seed](const std::string& tid, const PartTree& tree, int index) {
    return sample_condition(model, tree, tid, index, seed);
  };
}

ConditionSampler ground_truth_sampler(const Dataset& ds) {
  return [&ds](const std::string& tid, const PartTree&, int index) {
    const auto& ids = ds.by_template.at(tid);
    return ds.shape(ids[static_cast<std::size_t>(index) % ids.size()]).parts;
  };
}

MetricReport evaluate(const ConditionSampler& sampler, const Dataset& ds, const std::vector<std::string>& templates,
                      std::size_t shape_points, const EvalConfig& cfg, const FeatureExtractor* fx) {
  for (const auto& m : cfg.metrics) require(kAllMetrics.count(m), ErrorCode::kInvalidArgument, "unknown metric '" + m + "'");
  require(!templates.empty(), ErrorCode::kInvalidArgument, "evaluate: no templates to evaluate");
  const bool want_fpd = cfg.metrics.count("fpd") != 0;
  require(!want_fpd || fx != nullptr, ErrorCode::kInvalidArgument, "fpd requested without a feature extractor");
  auto want = [&](const char* m) { return cfg.metrics.count(m) != 0; };
  const std::size_t N = shape_points;

  struct Condition {
    std::string tid;
    const PartTree* tree;
    std::vector<PartCloudSet> reals;
  };
  std::vector<Condition> conds;
  for (const auto& tid : templates) {
    auto it = ds.by_template.find(tid);
    require(it != ds.by_template.end() && !it->second.empty(), ErrorCode::kInvalidArgument, "unknown template " + tid);
    Condition c{tid, &ds.shape(it->second.front()).tree, {}};
    for (const auto& sid : it->second) c.reals.push_back(ds.shape(sid).parts);
    conds.push_back(std::move(c));
  }

  const int n_samples = std::max(want("s_cov") || want("p_cov") || want("his") ? cfg.n_gen : 0,
                                 want("s_div") || want("p_div") ? cfg.n_div : 0);
  std::vector<ConditionMetrics> results(conds.size());
  std::atomic<std::size_t> next{0};
  auto work = [&]() {
    for (std::size_t c = next++; c < conds.size(); c = next++) {
      const Condition& cond = conds[c];
      std::vector<PartCloudSet> samples;
      for (int i = 0; i < n_samples; ++i) samples.push_back(sampler(cond.tid, *cond.tree, i));
      const Sampler replay = [&](int i) { return samples[static_cast<std::size_t>(i)]; };
      const ShapeDistance shape_d = [&](const PartCloudSet& a, const PartCloudSet& b) { return dist_shape(a, b, N); };
      const ShapeDistance part_d = [&](const PartCloudSet& a, const PartCloudSet& b) {
        return dist_part(a, b, *cond.tree);
      };
      ConditionMetrics& m = results[c];
      if (want("s_cov")) m.s_cov = coverage(cond.reals, replay, cfg.n_gen, shape_d);
      if (want("p_cov")) m.p_cov = coverage(cond.reals, replay, cfg.n_gen, part_d);
      if (want("s_div")) m.s_div = diversity(replay, cfg.n_div, shape_d);
      if (want("p_div")) m.p_div = diversity(replay, cfg.n_div, part_d);
      if (want("his")) {
        double sum = 0.0;
        for (int i = 0; i < cfg.n_gen; ++i) sum += tree_edit_distance(extract_tree(*cond.tree, samples[static_cast<std::size_t>(i)]), *cond.tree);
        m.his = sum / cfg.n_gen;
      }
    }
  };
  const int workers = std::max(1, std::min<int>(cfg.workers, static_cast<int>(conds.size())));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  MetricReport report;
  for (std::size_t c = 0; c < conds.size(); ++c) report.per_condition[conds[c].tid] = results[c];
  if (want_fpd) {
    std::vector<std::vector<float>> real_f, gen_f;
    for (const auto& c : conds)
      for (const auto& r : c.reals) real_f.push_back(fx->extract(downsample(r, N)));
    const int n_fpd = cfg.n_fpd > 0 ? cfg.n_fpd : static_cast<int>(real_f.size());
    for (int i = 0; i < n_fpd; ++i) {
      const Condition& c = conds[static_cast<std::size_t>(i) % conds.size()];
      const int index = n_samples + i / static_cast<int>(conds.size());
      gen_f.push_back(fx->extract(downsample(sampler(c.tid, *c.tree, index), N)));
    }
    report.fpd = pt2pc::fpd(real_f, gen_f);
    report.extractor = fx->provenance();
  }
  report.finalize();
  return report;
}

}  // namespace pt2pc
