#pragma once

// One damaged copy of a small synthetic dataset per loader defect.

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "common.hpp"
#include "pt2pc/dataset.hpp"

namespace malformed {

namespace fs = std::filesystem;
using namespace pt2pc;

struct Case {
  std::string name;
  ErrorCode want;
  std::function<void(const fs::path&)> damage;
};

inline nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

inline void write_text(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

/// Written by `base_dataset`; every case damages shape t000_s000 or meta.json.
inline const std::string kShape = "t000_s000";

inline fs::path base_dataset() {
  static const fs::path base = [] {
    const fs::path d = testing_util::temp_dir("malformed_base");
    synth(SynthConfig{Category::kTable, 4, 3, 32, 11, 0.75}, d);
    return d;
  }();
  return base;
}

inline fs::path part_path(const fs::path& d, int leaf) {
  return d / "shapes" / kShape / "parts" / (std::to_string(leaf) + ".pc3f");
}

inline std::vector<Case> cases() {
  auto shape = [](const fs::path& d) { return load_dataset(d).shape(kShape); };
  return {
      {"missing meta.json", ErrorCode::kMissingMeta, [](const fs::path& d) { fs::remove(d / "meta.json"); }},
      {"truncated meta.json", ErrorCode::kBadMeta,
       [](const fs::path& d) { write_text(d / "meta.json", "{\"category\": "); }},
      {"template in both splits", ErrorCode::kSplitOverlap,
       [](const fs::path& d) {
         auto meta = read_json(d / "meta.json");
         meta["splits"]["test"].push_back(meta["splits"]["train"][0]);
         write_text(d / "meta.json", meta.dump());
       }},
      {"missing tree.json", ErrorCode::kMissingTree,
       [](const fs::path& d) { fs::remove(d / "shapes" / kShape / "tree.json"); }},
      {"missing leaf cloud", ErrorCode::kMissingPart,
       [=](const fs::path& d) { fs::remove(part_path(d, shape(d).tree.leaves().back())); }},
      {"short leaf cloud", ErrorCode::kPartSizeMismatch,
       [=](const fs::path& d) {
         save_pc3f(part_path(d, shape(d).tree.leaves()[0]), PointCloud::from_points({{0, 0, 0}, {0.1f, 0, 0}}));
       }},
      {"cloud for an internal node", ErrorCode::kExtraPart,
       [=](const fs::path& d) {
         const ShapeRecord s = shape(d);
         save_pc3f(part_path(d, s.tree.root()), s.parts.begin()->second);
       }},
      {"shape off center", ErrorCode::kNormalization,
       [=](const fs::path& d) {
         for (const auto& [leaf, pc] : shape(d).parts) save_pc3f(part_path(d, leaf), pc.translated(0.1f, 0, 0));
       }},
      {"foreign tree inside a template", ErrorCode::kTemplateMismatch,
       [](const fs::path& d) {
         fs::remove_all(d / "shapes" / "t000_s001");
         fs::copy(d / "shapes" / "t001_s000", d / "shapes" / "t000_s001", fs::copy_options::recursive);
       }},
      {"PartNet counts", ErrorCode::kCountMismatch,
       [](const fs::path& d) {
         auto meta = read_json(d / "meta.json");
         meta["source"] = "partnet";
         write_text(d / "meta.json", meta.dump());
       }},
  };
}

struct Outcome {
  bool threw = false;
  ErrorCode code{};
  std::string message;
};

/// Applies `c` to a fresh copy of the base dataset and loads it.
inline Outcome run(const Case& c, const std::string& tag) {
  const fs::path d = testing_util::temp_dir("malformed_" + tag);
  fs::remove_all(d);
  fs::copy(base_dataset(), d, fs::copy_options::recursive);
  c.damage(d);
  Outcome o;
  try {
    load_dataset(d);
  } catch (const Error& e) {
    o.threw = true;
    o.code = e.code();
    o.message = e.what();
  }
  return o;
}

}  // namespace malformed
