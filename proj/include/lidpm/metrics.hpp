#pragma once

#include <map>
#include <string>
#include <vector>

#include "lidpm/cloud.hpp"

namespace lidpm {

enum class JsdMode { Bev, ThreeD };

// 0.5 * (mean_a d(a, B) + mean_b d(b, A)), Euclidean nearest-neighbour distances.
double chamfer(const Points& a, const Points& b);
double chamfer(const PointCloud& a, const PointCloud& b);

// Jensen-Shannon divergence (natural log) between normalised occupancy
// histograms. Cells are floor((p + extent) / resolution); BEV drops z.
double jsd(const Points& a, const Points& b, JsdMode mode, double resolution, double extent);
double jsd(const PointCloud& a, const PointCloud& b, JsdMode mode, double resolution,
           double extent);

// Intersection over union of occupied voxels on a shared lattice. Two empty
// clouds give 1.
double voxel_iou(const Points& pred, const Points& gt, double resolution, const Vec3& origin);
double voxel_iou(const PointCloud& pred, const PointCloud& gt, double resolution,
                 const Vec3& origin);

struct MetricOptions {
  double jsd_resolution = 0.5;
  double extent = 50.0;
  std::vector<double> iou_resolutions{0.5, 0.2, 0.1};
};

struct MetricReport {
  std::string scan_id;
  double cd = 0.0;
  double jsd_bev = 0.0;
  double jsd_3d = 0.0;
  std::map<double, double> iou;  // resolution -> IoU
  double jsd_resolution = 0.5;
  double extent = 50.0;

  // Single-line JSON record.
  std::string to_json() const;
  // CSV row in csv_header() column order; missing IoU resolutions are empty.
  std::string to_csv_row() const;
};

std::string csv_header();

// Every metric of one prediction against its ground truth. Voxel lattices are
// anchored at snapped_origin(extent, resolution).
MetricReport evaluate(const PointCloud& pred, const PointCloud& gt, const MetricOptions& opts,
                      std::string scan_id = "");

}  // namespace lidpm
