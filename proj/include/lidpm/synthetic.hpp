#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "lidpm/cloud.hpp"
#include "lidpm/dataio.hpp"

namespace lidpm {

// Semantic ids used by the synthetic scenes (same numbering as the labelled dataset).
namespace label {
inline constexpr std::uint32_t kCar = 10;
inline constexpr std::uint32_t kRoad = 40;
inline constexpr std::uint32_t kBuilding = 50;
inline constexpr std::uint32_t kPole = 80;
inline constexpr std::uint32_t kMovingCar = 252;
}  // namespace label

struct Box {
  Vec3 lo;
  Vec3 hi;
  std::uint32_t label = label::kBuilding;
  Vec3 velocity = Vec3::Zero();  // metres per scan

  Box moved(double time) const { return {lo + time * velocity, hi + time * velocity, label, velocity}; }
};

// Street canyon in world coordinates: flat ground at z = 0, buildings,
// parked cars and poles on both sides, and one car driving along the road.
struct StreetScene {
  std::vector<Box> boxes;
};

StreetScene street_scene(std::uint64_t seed, double length = 160.0);

struct LidarPattern {
  int beams = 64;
  int azimuth_steps = 1024;
  double min_elevation_deg = -24.8;
  double max_elevation_deg = 2.0;
  double min_range = 2.5;
  double max_range = 80.0;
  double range_noise = 0.01;
  double sensor_height = 1.73;
};

// Ray-cast scan from a sensor at (x, y, sensor_height) with identity
// orientation; points in the sensor frame, pose = sensor -> world.
ScanRecord virtual_scan(const StreetScene& scene, const Vec3& sensor_xy, const LidarPattern& pattern,
                        std::uint64_t seed, double time = 0.0);

// n scans driving along +x, spaced by `spacing` metres, scan i at time i.
std::vector<ScanRecord> synthetic_sequence(const StreetScene& scene, std::size_t n_scans,
                                           double spacing, const LidarPattern& pattern,
                                           std::uint64_t seed);

// Two Gaussian blobs (centres (-2,0,0) and (2,0,0), std 0.4). The sparse
// scan misses every point of the second blob inside the hole box.
struct TwoClusterScene {
  Points dense;
  Points sparse;
  Vec3 hole_lo;
  Vec3 hole_hi;

  bool in_hole(const Vec3& p) const {
    return (p.array() >= hole_lo.array()).all() && (p.array() <= hole_hi.array()).all();
  }
};

TwoClusterScene two_cluster_scene(std::size_t n_dense, std::size_t n_sparse, std::uint64_t seed);

enum class ShapeTemplate { Straight, Crossing, Turn };

ShapeTemplate template_from_string(const std::string& name);
std::string to_string(ShapeTemplate t);

// Road surface at sensor-frame ground height plus 4 m walls along its borders.
PointCloud template_cloud(ShapeTemplate t, std::size_t n, std::uint64_t seed);

}  // namespace lidpm
