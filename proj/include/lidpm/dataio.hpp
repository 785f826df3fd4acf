#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lidpm/cloud.hpp"

namespace lidpm {

using Pose = Eigen::Matrix4d;

struct ScanRecord {
  PointCloud cloud;                                 // sensor frame
  Pose pose = Pose::Identity();                     // sensor -> world
  std::optional<std::vector<std::uint32_t>> labels; // raw 32-bit label words
};

// Semantic class of a raw label word (low 16 bits).
inline std::uint32_t semantic_class(std::uint32_t label) { return label & 0xFFFFu; }

// moving-car .. moving-other-vehicle.
std::vector<std::uint32_t> default_moving_classes();

// Rotation block orthonormal and right-handed within tol, last row (0 0 0 1).
bool is_valid_pose(const Pose& pose, double tol = 1e-6);

// Velodyne .bin: little-endian float32 (x, y, z, intensity) records.
PointCloud read_bin(const std::filesystem::path& path);
// Labels file: little-endian uint32 per point.
std::vector<std::uint32_t> read_labels(const std::filesystem::path& path);

// Reads a scan and, if present, its labels: <labels_dir>/<stem>.label when
// labels_dir is given, otherwise the sibling <stem>.label.
ScanRecord read_scan(const std::filesystem::path& path,
                     const std::optional<std::filesystem::path>& labels_dir = std::nullopt);

enum class CloudFormat { Ply, Bin };

// Chosen from the extension (.ply or .bin), DataError otherwise.
CloudFormat format_from_path(const std::filesystem::path& path);

void write_cloud(const PointCloud& pc, const std::filesystem::path& path, CloudFormat format);
void write_cloud(const PointCloud& pc, const std::filesystem::path& path);
void write_labels(const std::vector<std::uint32_t>& labels, const std::filesystem::path& path);

// Binary little-endian PLY with float or double x/y/z and an optional intensity.
PointCloud read_ply(const std::filesystem::path& path);
PointCloud read_cloud(const std::filesystem::path& path);

// One 3x4 row-major matrix per line.
std::vector<Pose> read_poses(const std::filesystem::path& path);
void write_poses(const std::vector<Pose>& poses, const std::filesystem::path& path);
// "Tr:" entry of a calib.txt (sensor -> camera). Identity when absent.
Pose read_calibration(const std::filesystem::path& path);
// Camera-frame poses to sensor-frame poses: Tr^-1 * P * Tr.
std::vector<Pose> sensor_poses(const std::vector<Pose>& camera_poses, const Pose& tr);

// Every scan in the center scan's frame, minus moving classes, cropped to max_range.
PointCloud aggregate(const std::vector<ScanRecord>& scans, std::size_t center_index,
                     double max_range,
                     const std::vector<std::uint32_t>& moving_classes = default_moving_classes());

struct PairConfig {
  std::size_t budget_sparse = 18000;
  std::size_t budget_dense = 180000;
  double crop_range = 50.0;
  std::uint64_t seed = 0;
  std::vector<std::uint32_t> moving_classes = default_moving_classes();
};

struct ScanPair {
  PointCloud sparse;
  PointCloud dense;
};

// sparse = FPS of the cropped center scan, dense = uniform subsample of the aggregate.
ScanPair make_pair(const std::vector<ScanRecord>& scans, std::size_t center_index,
                   const PairConfig& cfg);

struct SequencePaths {
  std::filesystem::path scans_dir;
  std::optional<std::filesystem::path> poses_file;
  std::optional<std::filesystem::path> calib_file;
  std::optional<std::filesystem::path> labels_dir;
};

// Loads scans center-window .. center+window (clamped) with their poses.
// Returns the scans and the position of the center scan in the result.
std::pair<std::vector<ScanRecord>, std::size_t> load_window(const SequencePaths& paths,
                                                            std::size_t center,
                                                            std::size_t window);

}  // namespace lidpm
