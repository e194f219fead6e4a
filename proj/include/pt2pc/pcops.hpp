#pragma once

// Non-differentiable point-cloud and assignment primitives.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace pt2pc {

/// P x 3 points, row-major.
class PointCloud {
 public:
  PointCloud() = default;
  explicit PointCloud(std::vector<float> xyz);
  static PointCloud from_points(const std::vector<std::array<float, 3>>& pts);

  std::size_t size() const { return xyz_.size() / 3; }
  bool empty() const { return xyz_.empty(); }
  std::array<float, 3> point(std::size_t i) const { return {xyz_[3 * i], xyz_[3 * i + 1], xyz_[3 * i + 2]}; }
  std::span<const float> data() const { return xyz_; }
  std::span<float> mutable_data() { return xyz_; }
  const std::vector<float>& raw() const { return xyz_; }

  void append(const PointCloud& other);
  PointCloud translated(float dx, float dy, float dz) const;

  bool operator==(const PointCloud&) const = default;

 private:
  std::vector<float> xyz_;
};

/// Leaf id -> part point cloud.
using PartCloudSet = std::map<int, PointCloud>;

/// Concatenation of all part clouds in ascending leaf-id order.
PointCloud union_cloud(const PartCloudSet& parts);

/// n points uniform on the surface of the origin-centered unit cube.
PointCloud sample_cube(std::size_t n, std::uint64_t seed);

/// Furthest point sampling: first pick is index 0; ties go to the lowest index.
std::vector<int> fps_indices(const PointCloud& pc, std::size_t k);
PointCloud fps(const PointCloud& pc, std::size_t k);
PointCloud gather(const PointCloud& pc, std::span<const int> indices);

/// Row-major n x n cost matrix.
struct CostMatrix {
  std::size_t n = 0;
  std::vector<double> costs;

  CostMatrix() = default;
  CostMatrix(std::size_t n, std::vector<double> costs);
  double operator()(std::size_t r, std::size_t c) const { return costs[r * n + c]; }
};

struct Assignment {
  std::vector<int> col_of_row;
  double total = 0.0;
};

/// Exact minimum-cost perfect assignment (Hungarian method with potentials).
Assignment hungarian(const CostMatrix& costs);
/// Throws unless the matrix is square (rows * rows == costs.size()).
Assignment hungarian(std::size_t rows, std::size_t cols, std::vector<double> costs);

/// Minimum-cost assignment by epsilon-scaling auction. The result is within
/// `rel_tol` of the optimum (n * eps bound); falls back to hungarian when
/// that bound cannot be certified.
Assignment auction(const CostMatrix& costs, double rel_tol = 0.01);

inline constexpr std::size_t kExactEmdThreshold = 256;

/// (1/P) min over bijections of the summed Euclidean distances.
/// Exact up to kExactEmdThreshold points, auction (<= 1% error) above.
double emd(const PointCloud& a, const PointCloud& b);
double emd_exact(const PointCloud& a, const PointCloud& b);
double emd_auction(const PointCloud& a, const PointCloud& b);

// PC3F: "PC3F", uint32 LE count, count x 3 float32 LE.
std::string encode_pc3f(const PointCloud& pc);
PointCloud decode_pc3f(const std::string& bytes);
void save_pc3f(const std::filesystem::path& path, const PointCloud& pc);
PointCloud load_pc3f(const std::filesystem::path& path);

}  // namespace pt2pc
