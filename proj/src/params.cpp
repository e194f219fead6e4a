#include "pt2pc/params.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "pt2pc/error.hpp"

namespace pt2pc {

namespace {

constexpr char kMagic[8] = {'P', 'T', '2', 'P', 'C', 'C', 'K', 'P'};

template <class T>
void put_le(std::string& out, T value) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
}

template <class T>
T get_le(const std::string& in, std::size_t pos) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    v |= static_cast<T>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

void put_f32(std::string& out, float f) { put_le(out, std::bit_cast<std::uint32_t>(f)); }
float get_f32(const std::string& in, std::size_t pos) { return std::bit_cast<float>(get_le<std::uint32_t>(in, pos)); }

}  // namespace

const Tensor& Checkpoint::get(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t.tensor;
  fail(ErrorCode::kBadCheckpoint, "checkpoint has no tensor named '" + name + "'");
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json manifest;
  manifest["version"] = kCheckpointVersion;
  manifest["config"] = ckpt.config;
  manifest["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : ckpt.tensors) {
    manifest["tensors"].push_back({{"name", t.name},
                                   {"shape", {t.tensor.rows(), t.tensor.cols()}},
                                   {"dtype", "float32"},
                                   {"offset", offset}});
    offset += t.tensor.size() * 4;
  }
  const std::string text = manifest.dump();
  std::string out(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, text.size());
  out += text;
  out.reserve(out.size() + offset);
  for (const auto& t : ckpt.tensors)
    for (float v : t.tensor.values()) put_f32(out, v);
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  require(bytes.size() >= 20 && std::memcmp(bytes.data(), kMagic, 8) == 0, ErrorCode::kBadCheckpoint,
          "not a checkpoint (bad magic)");
  const auto version = get_le<std::uint32_t>(bytes, 8);
  require(version == kCheckpointVersion, ErrorCode::kBadCheckpoint,
          "unsupported checkpoint version " + std::to_string(version));
  const auto len = get_le<std::uint64_t>(bytes, 12);
  require(20 + len <= bytes.size(), ErrorCode::kBadCheckpoint, "truncated checkpoint manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(20, len));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kBadCheckpoint, std::string("checkpoint manifest: ") + e.what());
  }
  Checkpoint ckpt;
  const std::size_t base = 20 + len;
  try {
    ckpt.config = manifest.at("config");
    std::uint64_t expect = 0;
    for (const auto& e : manifest.at("tensors")) {
      require(e.at("dtype") == "float32", ErrorCode::kBadCheckpoint, "unsupported dtype");
      const int rows = e.at("shape").at(0).get<int>();
      const int cols = e.at("shape").at(1).get<int>();
      const auto off = e.at("offset").get<std::uint64_t>();
      require(off == expect, ErrorCode::kBadCheckpoint, "non-contiguous tensor offsets");
      const std::size_t n = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
      require(base + off + n * 4 <= bytes.size(), ErrorCode::kBadCheckpoint, "truncated tensor buffer");
      std::vector<float> data(n);
      for (std::size_t i = 0; i < n; ++i) data[i] = get_f32(bytes, base + off + i * 4);
      ckpt.tensors.push_back({e.at("name").get<std::string>(), Tensor::from(rows, cols, std::move(data))});
      expect += n * 4;
    }
    require(base + expect == bytes.size(), ErrorCode::kBadCheckpoint, "trailing bytes after tensor buffers");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kBadCheckpoint, std::string("checkpoint manifest: ") + e.what());
  }
  return ckpt;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::kIo, "write failed for " + path.string());
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace pt2pc
