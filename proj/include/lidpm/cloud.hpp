#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <unordered_set>
#include <vector>

#include <Eigen/Core>

namespace lidpm {

using Vec3 = Eigen::Vector3d;
using Points = std::vector<Vec3>;

/// Ordered set of metric 3D points in the ego frame (sensor at the origin),
/// with an optional per-point intensity channel.
struct PointCloud {
  Points points;
  std::optional<std::vector<float>> intensity;

  PointCloud() = default;
  explicit PointCloud(Points pts) : points(std::move(pts)) {}

  std::size_t size() const noexcept { return points.size(); }
  bool empty() const noexcept { return points.empty(); }

  // Throws std::invalid_argument on non-finite coordinates or a mismatched
  // intensity channel.
  void validate() const;
};

// Integer lattice coordinate of a voxel.
struct VoxelIndex {
  std::int64_t x = 0;
  std::int64_t y = 0;
  std::int64_t z = 0;

  friend bool operator==(const VoxelIndex&, const VoxelIndex&) = default;
};

struct VoxelIndexHash {
  std::size_t operator()(const VoxelIndex& v) const noexcept {
    std::uint64_t h = static_cast<std::uint64_t>(v.x) * 0x9E3779B97F4A7C15ULL;
    h ^= static_cast<std::uint64_t>(v.y) * 0xC2B2AE3D27D4EB4FULL + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint64_t>(v.z) * 0x165667B19E3779F9ULL + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

struct VoxelGrid {
  double resolution = 0.0;
  Vec3 origin = Vec3::Zero();
  std::unordered_set<VoxelIndex, VoxelIndexHash> occupied;

  std::size_t size() const noexcept { return occupied.size(); }
  // Centre of a lattice cell in metric coordinates.
  Vec3 center(const VoxelIndex& v) const;
};

// Keeps the points whose 3D distance to the origin is <= max_range, in order.
PointCloud range_crop(const PointCloud& pc, double max_range);

// Greedy max-min selection. The first index is a seeded uniform draw; ties go
// to the lowest index. Returns indices in selection order.
std::vector<std::size_t> farthest_point_indices(const Points& pts, std::size_t n,
                                                std::uint64_t seed);
PointCloud farthest_point_sample(const PointCloud& pc, std::size_t n, std::uint64_t seed);

// n distinct indices drawn uniformly without replacement, returned ascending.
std::vector<std::size_t> uniform_sample_indices(std::size_t count, std::size_t n,
                                                std::uint64_t seed);
PointCloud uniform_sample(const PointCloud& pc, std::size_t n, std::uint64_t seed);

// Subset of pc at the given indices, in index order.
PointCloud select(const PointCloud& pc, const std::vector<std::size_t>& indices);

// k back-to-back copies: point i*|pc| + j equals input point j.
PointCloud duplicate_k(const PointCloud& pc, std::size_t k);

// Appends n_points area-uniform samples of the disc of the given radius
// around the origin at height ground_z. Appended intensities are 0.
PointCloud disc_augment(const PointCloud& pc, std::size_t n_points, double radius,
                        double ground_z, std::uint64_t seed);

// 5th percentile of z among points within 10 m horizontally of the origin,
// falling back to all points, then to 0 for an empty cloud.
double estimate_ground_height(const PointCloud& pc);

VoxelGrid voxelize(const PointCloud& pc, double resolution, const Vec3& origin);
VoxelGrid voxelize(const Points& pts, double resolution, const Vec3& origin);

// Lattice anchor (-extent, -extent, -extent) snapped down to the resolution.
Vec3 snapped_origin(double extent, double resolution);

}  // namespace lidpm
