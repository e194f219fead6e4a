#pragma once

// Checkpoint container: a JSON manifest (names, shapes, dtype, free-form
// config) followed by raw little-endian float32 buffers.
//
//   bytes 0..7    magic "PT2PCCKP"
//   bytes 8..11   uint32 format version
//   bytes 12..19  uint64 manifest length L
//   next L bytes  manifest JSON
//   remainder     tensor buffers, in manifest order

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "pt2pc/tensor.hpp"

namespace pt2pc {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct Checkpoint {
  nlohmann::json config = nlohmann::json::object();
  std::vector<NamedTensor> tensors;

  const Tensor& get(const std::string& name) const;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

/// FNV-1a, used for input fingerprints in run manifests.
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace pt2pc
