#include "lidpm/cloud.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>

#include "lidpm/random.hpp"

namespace lidpm {

void PointCloud::validate() const {
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!points[i].allFinite()) {
      throw std::invalid_argument("non-finite coordinate at point " + std::to_string(i));
    }
  }
  if (intensity && intensity->size() != points.size()) {
    throw std::invalid_argument("intensity channel length does not match point count");
  }
}

Vec3 VoxelGrid::center(const VoxelIndex& v) const {
  return origin + resolution * Vec3(static_cast<double>(v.x) + 0.5, static_cast<double>(v.y) + 0.5,
                                    static_cast<double>(v.z) + 0.5);
}

PointCloud range_crop(const PointCloud& pc, double max_range) {
  if (!(max_range > 0.0)) throw std::invalid_argument("max_range must be > 0");
  std::vector<std::size_t> keep;
  keep.reserve(pc.size());
  for (std::size_t i = 0; i < pc.size(); ++i) {
    if (pc.points[i].norm() <= max_range) keep.push_back(i);
  }
  return select(pc, keep);
}

PointCloud select(const PointCloud& pc, const std::vector<std::size_t>& indices) {
  PointCloud out;
  out.points.reserve(indices.size());
  for (std::size_t i : indices) out.points.push_back(pc.points.at(i));
  if (pc.intensity) {
    std::vector<float> inten;
    inten.reserve(indices.size());
    for (std::size_t i : indices) inten.push_back((*pc.intensity)[i]);
    out.intensity = std::move(inten);
  }
  return out;
}

std::vector<std::size_t> farthest_point_indices(const Points& pts, std::size_t n,
                                                std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("farthest point sampling needs n >= 1");
  const std::size_t count = pts.size();
  if (count <= n) {
    std::vector<std::size_t> all(count);
    std::iota(all.begin(), all.end(), std::size_t{0});
    return all;
  }

  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, count - 1);
  std::size_t current = pick(rng);

  std::vector<std::size_t> chosen;
  chosen.reserve(n);
  // Selected points are marked with -1 so they are never picked again.
  std::vector<double> min_d2(count, std::numeric_limits<double>::infinity());
  for (std::size_t step = 0; step < n; ++step) {
    chosen.push_back(current);
    min_d2[current] = -1.0;
    if (step + 1 == n) break;

    const Vec3 c = pts[current];
    double best = -1.0;
    std::size_t best_idx = 0;
    for (std::size_t j = 0; j < count; ++j) {
      double& m = min_d2[j];
      if (m < 0.0) continue;
      const double d2 = (pts[j] - c).squaredNorm();
      if (d2 < m) m = d2;
      if (m > best) {
        best = m;
        best_idx = j;
      }
    }
    current = best_idx;
  }
  return chosen;
}

PointCloud farthest_point_sample(const PointCloud& pc, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("farthest point sampling needs n >= 1");
  if (pc.size() <= n) return pc;
  return select(pc, farthest_point_indices(pc.points, n, seed));
}

std::vector<std::size_t> uniform_sample_indices(std::size_t count, std::size_t n,
                                                std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("uniform sampling needs n >= 1");
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (count <= n) return idx;

  // Partial Fisher-Yates shuffle.
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, count - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  return idx;
}

PointCloud uniform_sample(const PointCloud& pc, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("uniform sampling needs n >= 1");
  if (pc.size() <= n) return pc;
  return select(pc, uniform_sample_indices(pc.size(), n, seed));
}

PointCloud duplicate_k(const PointCloud& pc, std::size_t k) {
  if (k == 0) throw std::invalid_argument("duplication factor must be >= 1");
  PointCloud out;
  out.points.reserve(pc.size() * k);
  for (std::size_t r = 0; r < k; ++r) {
    out.points.insert(out.points.end(), pc.points.begin(), pc.points.end());
  }
  if (pc.intensity) {
    std::vector<float> inten;
    inten.reserve(pc.size() * k);
    for (std::size_t r = 0; r < k; ++r) {
      inten.insert(inten.end(), pc.intensity->begin(), pc.intensity->end());
    }
    out.intensity = std::move(inten);
  }
  return out;
}

PointCloud disc_augment(const PointCloud& pc, std::size_t n_points, double radius,
                        double ground_z, std::uint64_t seed) {
  if (!(radius > 0.0)) throw std::invalid_argument("disc radius must be > 0");
  PointCloud out = pc;
  if (n_points == 0) return out;

  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  out.points.reserve(pc.size() + n_points);
  for (std::size_t i = 0; i < n_points; ++i) {
    const double r = radius * std::sqrt(unit(rng));
    const double theta = 2.0 * std::numbers::pi * unit(rng);
    out.points.emplace_back(r * std::cos(theta), r * std::sin(theta), ground_z);
  }
  if (out.intensity) out.intensity->resize(out.points.size(), 0.0f);
  return out;
}

namespace {

double percentile(std::vector<double> v, double q) {
  const auto k = static_cast<std::size_t>(std::floor(q * static_cast<double>(v.size() - 1)));
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
  return v[k];
}

}  // namespace

double estimate_ground_height(const PointCloud& pc) {
  constexpr double kNearRadius = 10.0;
  constexpr double kQuantile = 0.05;
  std::vector<double> near_z;
  for (const auto& p : pc.points) {
    if (std::hypot(p.x(), p.y()) <= kNearRadius) near_z.push_back(p.z());
  }
  if (!near_z.empty()) return percentile(std::move(near_z), kQuantile);
  if (pc.empty()) return 0.0;
  std::vector<double> all_z;
  all_z.reserve(pc.size());
  for (const auto& p : pc.points) all_z.push_back(p.z());
  return percentile(std::move(all_z), kQuantile);
}

VoxelGrid voxelize(const Points& pts, double resolution, const Vec3& origin) {
  if (!(resolution > 0.0)) throw std::invalid_argument("voxel resolution must be > 0");
  VoxelGrid grid;
  grid.resolution = resolution;
  grid.origin = origin;
  grid.occupied.reserve(pts.size());
  for (const auto& p : pts) {
    const Vec3 q = (p - origin) / resolution;
    grid.occupied.insert({static_cast<std::int64_t>(std::floor(q.x())),
                          static_cast<std::int64_t>(std::floor(q.y())),
                          static_cast<std::int64_t>(std::floor(q.z()))});
  }
  return grid;
}

VoxelGrid voxelize(const PointCloud& pc, double resolution, const Vec3& origin) {
  return voxelize(pc.points, resolution, origin);
}

Vec3 snapped_origin(double extent, double resolution) {
  if (!(resolution > 0.0)) throw std::invalid_argument("voxel resolution must be > 0");
  const double o = std::floor(-extent / resolution) * resolution;
  return Vec3::Constant(o);
}

}  // namespace lidpm
