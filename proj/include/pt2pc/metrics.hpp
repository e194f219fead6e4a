#pragma once

// Evaluation metrics: part and shape coverage, part and shape diversity,
// Frechet point-cloud distance, and the hierarchical tree-edit distance
// behind the HierInsSeg score.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "pt2pc/dataset.hpp"
#include "pt2pc/features.hpp"
#include "pt2pc/parttree.hpp"
#include "pt2pc/pcops.hpp"
#include "pt2pc/trainer.hpp"

namespace pt2pc {

/// Mean matched-part EMD. Parts only match parts of the same label whose
/// parents were matched to each other; matching inside each group of
/// interchangeable siblings is an exact assignment.
double dist_part(const PartCloudSet& x1, const PartCloudSet& x2, const PartTree& tree);

/// EMD between the n-point downsamples of the two part unions.
double dist_shape(const PartCloudSet& x1, const PartCloudSet& x2, std::size_t n);

using Sampler = std::function<PartCloudSet(int index)>;
using ShapeDistance = std::function<double(const PartCloudSet&, const PartCloudSet&)>;

/// Mean over reals of the distance to the closest of n_gen samples.
double coverage(const std::vector<PartCloudSet>& reals, const Sampler& gen, int n_gen, const ShapeDistance& dist);
/// Sum over all n^2 ordered pairs (diagonal included) divided by n^2.
double diversity(const Sampler& gen, int n, const ShapeDistance& dist);

/// ||mu_r - mu_g||^2 + Tr(S_r + S_g - 2 (S_r S_g)^(1/2)); each side needs at
/// least k + 1 vectors.
double fpd(const std::vector<std::vector<float>>& real, const std::vector<std::vector<float>>& gen);

/// Unnormalized recursive matching cost between two trees.
double tree_edit_cost(const PartTree& pred, const PartTree& cond);
/// tree_edit_cost / number of nodes of `cond`.
double tree_edit_distance(const PartTree& pred, const PartTree& cond);

/// The condition tree restricted to the leaves that received a non-empty
/// cloud and their ancestors (the root is always kept).
PartTree extract_tree(const PartTree& cond, const PartCloudSet& sample);

/// Mean over conditions of the mean tree-edit distance of n extracted trees.
double his_score(const std::vector<PartTree>& conditions,
                 const std::function<PartCloudSet(std::size_t cond, int index)>& gen, int n);

// ---- report -----------------------------------------------------------------

struct ConditionMetrics {
  std::optional<double> s_cov, p_cov, s_div, p_div, his;
  bool operator==(const ConditionMetrics&) const = default;
};

struct MetricReport {
  std::map<std::string, ConditionMetrics> per_condition;
  ConditionMetrics aggregate;
  std::optional<double> fpd;
  std::string extractor;  // provenance of the fpd features

  /// Recomputes `aggregate` as per-metric means over conditions.
  void finalize();
  std::string serialize() const;
  static MetricReport parse(const std::string& text);
  bool operator==(const MetricReport&) const = default;
};

inline const std::set<std::string> kAllMetrics{"s_cov", "p_cov", "s_div", "p_div", "fpd", "his"};

struct EvalConfig {
  std::set<std::string> metrics = kAllMetrics;
  int n_gen = 100;  // samples per condition for coverage and his
  int n_div = 10;   // samples per condition for diversity
  int n_fpd = 0;    // generated clouds for fpd; 0 means one per real shape
  std::uint64_t seed = 0;
  int workers = 1;
};

/// The PartCloudSet the model emits for sample `index` of condition `tid`.
PartCloudSet sample_condition(const ModelParams& model, const PartTree& tree, const std::string& tid, int index,
                              std::uint64_t seed);

/// Sample `index` for template `tid` with symbolic tree `tree`. Must be
/// deterministic and safe to call from several threads.
using ConditionSampler = std::function<PartCloudSet(const std::string& tid, const PartTree& tree, int index)>;

ConditionSampler model_sampler(const ModelParams& model, std::uint64_t seed);
/// Replays the real shapes of each template in order, cycling.
ConditionSampler ground_truth_sampler(const Dataset& ds);

/// Evaluates a sampler on the given templates of `ds`, with clouds
/// downsampled to `shape_points` for shape distances and fpd. `fx` is
/// required when fpd is requested.
MetricReport evaluate(const ConditionSampler& sampler, const Dataset& ds, const std::vector<std::string>& templates,
                      std::size_t shape_points, const EvalConfig& cfg, const FeatureExtractor* fx);

}  // namespace pt2pc
