#include "pt2pc/pcops.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <random>

#include "pt2pc/error.hpp"
#include "pt2pc/params.hpp"

namespace pt2pc {

PointCloud::PointCloud(std::vector<float> xyz) : xyz_(std::move(xyz)) {
  require(xyz_.size() % 3 == 0, ErrorCode::kBadPointCloud, "point buffer length is not a multiple of 3");
  for (float v : xyz_) require(std::isfinite(v), ErrorCode::kBadPointCloud, "non-finite point coordinate");
}

PointCloud PointCloud::from_points(const std::vector<std::array<float, 3>>& pts) {
  std::vector<float> xyz;
  xyz.reserve(pts.size() * 3);
  for (const auto& p : pts) xyz.insert(xyz.end(), p.begin(), p.end());
  return PointCloud(std::move(xyz));
}

void PointCloud::append(const PointCloud& other) { xyz_.insert(xyz_.end(), other.xyz_.begin(), other.xyz_.end()); }

PointCloud PointCloud::translated(float dx, float dy, float dz) const {
  PointCloud out = *this;
  for (std::size_t i = 0; i < size(); ++i) {
    out.xyz_[3 * i] += dx;
    out.xyz_[3 * i + 1] += dy;
    out.xyz_[3 * i + 2] += dz;
  }
  return out;
}

PointCloud union_cloud(const PartCloudSet& parts) {
  PointCloud out;
  for (const auto& [id, pc] : parts) out.append(pc);
  return out;
}

PointCloud sample_cube(std::size_t n, std::uint64_t seed) {
  require(n >= 1, ErrorCode::kInvalidArgument, "sample_cube needs n >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> face(0, 5);
  std::uniform_real_distribution<float> u(-0.5f, 0.5f);
  std::vector<float> xyz(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const int f = face(rng);
    const int axis = f / 2;
    const float a = u(rng), b = u(rng);
    float* p = &xyz[3 * i];
    p[axis] = (f % 2 == 0) ? -0.5f : 0.5f;
    p[(axis + 1) % 3] = a;
    p[(axis + 2) % 3] = b;
  }
  return PointCloud(std::move(xyz));
}

std::vector<int> fps_indices(const PointCloud& pc, std::size_t k) {
  const std::size_t n = pc.size();
  require(k >= 1, ErrorCode::kInvalidArgument, "fps needs k >= 1");
  require(k <= n, ErrorCode::kInsufficientPoints,
          "insufficient points: fps of " + std::to_string(k) + " from " + std::to_string(n));
  const auto d = pc.data();
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  std::vector<int> picked;
  picked.reserve(k);
  int cur = 0;
  for (std::size_t s = 0; s < k; ++s) {
    picked.push_back(cur);
    const double cx = d[3 * cur], cy = d[3 * cur + 1], cz = d[3 * cur + 2];
    int next = 0;
    double far = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dx = d[3 * i] - cx, dy = d[3 * i + 1] - cy, dz = d[3 * i + 2] - cz;
      best[i] = std::min(best[i], dx * dx + dy * dy + dz * dz);
      if (best[i] > far) {
        far = best[i];
        next = static_cast<int>(i);
      }
    }
    cur = next;
  }
  return picked;
}

PointCloud gather(const PointCloud& pc, std::span<const int> indices) {
  std::vector<float> xyz;
  xyz.reserve(indices.size() * 3);
  for (int i : indices) {
    require(i >= 0 && static_cast<std::size_t>(i) < pc.size(), ErrorCode::kInvalidArgument, "gather index out of range");
    auto p = pc.point(static_cast<std::size_t>(i));
    xyz.insert(xyz.end(), p.begin(), p.end());
  }
  return PointCloud(std::move(xyz));
}

PointCloud fps(const PointCloud& pc, std::size_t k) { return gather(pc, fps_indices(pc, k)); }

CostMatrix::CostMatrix(std::size_t n_, std::vector<double> c) : n(n_), costs(std::move(c)) {
  require(costs.size() == n * n, ErrorCode::kShapeMismatch, "cost matrix is not square");
  for (double v : costs) require(std::isfinite(v), ErrorCode::kNonFinite, "non-finite assignment cost");
}

Assignment hungarian(std::size_t rows, std::size_t cols, std::vector<double> costs) {
  require(rows == cols, ErrorCode::kShapeMismatch,
          "hungarian needs a square matrix, got " + std::to_string(rows) + "x" + std::to_string(cols));
  require(costs.size() == rows * cols, ErrorCode::kShapeMismatch, "cost buffer does not match its extents");
  return hungarian(CostMatrix(rows, std::move(costs)));
}

Assignment hungarian(const CostMatrix& cm) {
  // Shortest augmenting paths with row/column potentials, O(n^3).
  const std::size_t n = cm.n;
  Assignment out;
  if (n == 0) return out;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<double> minv(n + 1);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      const double* row = &cm.costs[(i0 - 1) * n];
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = row[j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  out.col_of_row.assign(n, -1);
  for (std::size_t j = 1; j <= n; ++j) out.col_of_row[p[j] - 1] = static_cast<int>(j - 1);
  for (std::size_t i = 0; i < n; ++i) out.total += cm(i, static_cast<std::size_t>(out.col_of_row[i]));
  return out;
}

Assignment auction(const CostMatrix& cm, double rel_tol) {
  const std::size_t n = cm.n;
  if (n <= 1) return hungarian(cm);
  double cmax = 0.0;
  for (double c : cm.costs) cmax = std::max(cmax, std::abs(c));
  if (cmax == 0.0) return hungarian(cm);

  // Maximize benefit -cost. Prices persist across scaling phases.
  std::vector<double> price(n, 0.0);
  std::vector<int> owner(n), obj(n);
  double eps = cmax / 4.0;
  const double eps_floor = cmax * 1e-12;
  for (int phase = 0; phase < 64 && eps >= eps_floor; ++phase, eps /= 5.0) {
    std::fill(owner.begin(), owner.end(), -1);
    std::fill(obj.begin(), obj.end(), -1);
    std::vector<int> queue(n);
    for (std::size_t i = 0; i < n; ++i) queue[i] = static_cast<int>(n - 1 - i);
    while (!queue.empty()) {
      const int i = queue.back();
      queue.pop_back();
      const double* row = &cm.costs[static_cast<std::size_t>(i) * n];
      double best = -std::numeric_limits<double>::infinity(), second = best;
      std::size_t bj = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const double val = -row[j] - price[j];
        if (val > best) {
          second = best;
          best = val;
          bj = j;
        } else if (val > second) {
          second = val;
        }
      }
      price[bj] += best - second + eps;
      if (owner[bj] >= 0) {
        obj[static_cast<std::size_t>(owner[bj])] = -1;
        queue.push_back(owner[bj]);
      }
      owner[bj] = i;
      obj[static_cast<std::size_t>(i)] = static_cast<int>(bj);
    }
    Assignment a;
    a.col_of_row = obj;
    for (std::size_t i = 0; i < n; ++i) a.total += cm(i, static_cast<std::size_t>(obj[i]));
    const double slack = static_cast<double>(n) * eps;
    if (a.total - slack > 0.0 && slack <= rel_tol * (a.total - slack)) return a;
  }
  return hungarian(cm);
}

namespace {

CostMatrix distance_matrix(const PointCloud& a, const PointCloud& b) {
  const std::size_t n = a.size();
  std::vector<double> c(n * n);
  const auto pa = a.data(), pb = b.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double dx = static_cast<double>(pa[3 * i]) - pb[3 * j];
      const double dy = static_cast<double>(pa[3 * i + 1]) - pb[3 * j + 1];
      const double dz = static_cast<double>(pa[3 * i + 2]) - pb[3 * j + 2];
      c[i * n + j] = std::sqrt(dx * dx + dy * dy + dz * dz);
    }
  return CostMatrix(n, std::move(c));
}

void check_emd_inputs(const PointCloud& a, const PointCloud& b) {
  require(a.size() == b.size(), ErrorCode::kShapeMismatch,
          "emd needs equal-size clouds, got " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  require(!a.empty(), ErrorCode::kBadPointCloud, "emd of empty clouds");
}

}  // namespace

double emd_exact(const PointCloud& a, const PointCloud& b) {
  check_emd_inputs(a, b);
  return hungarian(distance_matrix(a, b)).total / static_cast<double>(a.size());
}

double emd_auction(const PointCloud& a, const PointCloud& b) {
  check_emd_inputs(a, b);
  // Solving both orientations and keeping the smaller makes the result
  // exactly symmetric in (a, b).
  const double ab = auction(distance_matrix(a, b)).total;
  const double ba = auction(distance_matrix(b, a)).total;
  return std::min(ab, ba) / static_cast<double>(a.size());
}

double emd(const PointCloud& a, const PointCloud& b) {
  check_emd_inputs(a, b);
  return a.size() <= kExactEmdThreshold ? emd_exact(a, b) : emd_auction(a, b);
}

std::string encode_pc3f(const PointCloud& pc) {
  std::string out = "PC3F";
  const auto n = static_cast<std::uint32_t>(pc.size());
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((n >> (8 * i)) & 0xff));
  out.reserve(out.size() + pc.data().size() * 4);
  for (float v : pc.data()) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
  return out;
}

PointCloud decode_pc3f(const std::string& bytes) {
  require(bytes.size() >= 8 && bytes.compare(0, 4, "PC3F") == 0, ErrorCode::kBadPointCloud, "bad PC3F magic");
  auto u32 = [&](std::size_t pos) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    return v;
  };
  const std::uint32_t n = u32(4);
  require(bytes.size() == 8 + static_cast<std::size_t>(n) * 12, ErrorCode::kBadPointCloud,
          "PC3F length does not match its point count");
  std::vector<float> xyz(static_cast<std::size_t>(n) * 3);
  for (std::size_t i = 0; i < xyz.size(); ++i) xyz[i] = std::bit_cast<float>(u32(8 + 4 * i));
  return PointCloud(std::move(xyz));
}

void save_pc3f(const std::filesystem::path& path, const PointCloud& pc) { write_file(path, encode_pc3f(pc)); }

PointCloud load_pc3f(const std::filesystem::path& path) { return decode_pc3f(read_file(path)); }

}  // namespace pt2pc
