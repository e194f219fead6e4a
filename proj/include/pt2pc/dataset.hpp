#pragma once

// Part-annotated shape datasets: procedural synthesis plus loading and
// template-level splitting of the on-disk layout
//
//   DIR/meta.json
//   DIR/shapes/<id>/tree.json
//   DIR/shapes/<id>/parts/<leaf_id>.pc3f

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pt2pc/parttree.hpp"
#include "pt2pc/pcops.hpp"

namespace pt2pc {

enum class Category { kTable, kChair, kLamp };

Category parse_category(const std::string& name);
std::string category_name(Category c);
SemanticVocab category_vocab(Category c);

struct ShapeRecord {
  std::string id;
  std::string template_id;
  PartTree tree;
  PartCloudSet parts;
};

struct DatasetSplit {
  std::vector<std::string> train_templates;
  std::vector<std::string> test_templates;
  std::vector<std::string> train_shapes;
  std::vector<std::string> test_shapes;
};

struct Dataset {
  std::string category;
  SemanticVocab vocab;
  int points_per_part = 0;
  std::string source = "synthetic";
  double split_ratio = 0.75;
  std::uint64_t split_seed = 0;
  std::vector<ShapeRecord> shapes;
  DatasetSplit split;
  /// template id -> shape ids, in record order.
  std::map<std::string, std::vector<std::string>> by_template;

  const ShapeRecord& shape(const std::string& id) const;
  std::vector<const ShapeRecord*> shapes_of(const std::vector<std::string>& template_ids) const;
};

struct SynthConfig {
  Category category = Category::kTable;
  int n_templates = 1;
  int shapes_per_template = 1;
  int points_per_part = 1000;
  std::uint64_t seed = 0;
  double split_ratio = 0.75;
};

/// Number of distinct symbolic templates the synthesizer can emit.
int max_templates(Category c);

Dataset synthesize(const SynthConfig& cfg);
void write_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset synth(const SynthConfig& cfg, const std::filesystem::path& dir);

/// Shape and part-tree counts per category for converted PartNet data.
struct PartNetCounts {
  int shapes_total, shapes_train, shapes_test;
  int trees_total, trees_train, trees_test;
};
std::optional<PartNetCounts> partnet_counts(const std::string& category);

/// Loads and validates a dataset directory. When meta.json declares
/// `"source": "partnet"` the split counts are checked against the published
/// PartNet statistics.
Dataset load_dataset(const std::filesystem::path& dir);

/// Templates shuffled by `seed`; the first ceil(ratio * T) (at most T - 1)
/// go to train, and every shape follows its template.
DatasetSplit split_by_template(const std::vector<ShapeRecord>& records, double ratio, std::uint64_t seed);

/// Unit-diagonal bounding box centered at the origin, within `tol`.
bool is_normalized(const PartCloudSet& parts, double tol = 1e-5);

}  // namespace pt2pc
