#include "lidpm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "lidpm/kdtree.hpp"

namespace lidpm {

namespace {

double directed_mean(const Points& from, const KdTree& to) {
  double sum = 0.0;
  for (const auto& p : from) sum += std::sqrt(to.nearest(p).sq_dist);
  return sum / static_cast<double>(from.size());
}

using Histogram = std::unordered_map<VoxelIndex, double, VoxelIndexHash>;

Histogram histogram(const Points& pts, JsdMode mode, double resolution, double extent) {
  Histogram h;
  for (const auto& p : pts) {
    VoxelIndex v;
    v.x = static_cast<std::int64_t>(std::floor((p.x() + extent) / resolution));
    v.y = static_cast<std::int64_t>(std::floor((p.y() + extent) / resolution));
    v.z = mode == JsdMode::Bev ? 0 : static_cast<std::int64_t>(std::floor((p.z() + extent) / resolution));
    h[v] += 1.0;
  }
  const double n = static_cast<double>(pts.size());
  for (auto& [cell, count] : h) count /= n;
  return h;
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

std::string iou_key(double resolution) {
  std::ostringstream os;
  os << resolution;
  return os.str();
}

}  // namespace

double chamfer(const Points& a, const Points& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("chamfer distance of an empty cloud");
  const KdTree ta(a);
  const KdTree tb(b);
  return 0.5 * (directed_mean(a, tb) + directed_mean(b, ta));
}

double chamfer(const PointCloud& a, const PointCloud& b) { return chamfer(a.points, b.points); }

double jsd(const Points& a, const Points& b, JsdMode mode, double resolution, double extent) {
  if (a.empty() || b.empty()) throw std::invalid_argument("jsd of an empty cloud");
  if (!(resolution > 0.0)) throw std::invalid_argument("jsd resolution must be > 0");
  if (!(extent > 0.0)) throw std::invalid_argument("jsd extent must be > 0");
  const Histogram p = histogram(a, mode, resolution, extent);
  const Histogram q = histogram(b, mode, resolution, extent);
  double sum = 0.0;
  for (const auto& [cell, pv] : p) {
    const auto it = q.find(cell);
    const double qv = it == q.end() ? 0.0 : it->second;
    sum += pv * std::log(2.0 * pv / (pv + qv));
  }
  for (const auto& [cell, qv] : q) {
    const auto it = p.find(cell);
    const double pv = it == p.end() ? 0.0 : it->second;
    sum += qv * std::log(2.0 * qv / (pv + qv));
  }
  return std::clamp(0.5 * sum, 0.0, std::log(2.0));
}

double jsd(const PointCloud& a, const PointCloud& b, JsdMode mode, double resolution,
           double extent) {
  return jsd(a.points, b.points, mode, resolution, extent);
}

double voxel_iou(const Points& pred, const Points& gt, double resolution, const Vec3& origin) {
  if (!(resolution > 0.0)) throw std::invalid_argument("voxel resolution must be > 0");
  const VoxelGrid gp = voxelize(pred, resolution, origin);
  const VoxelGrid gg = voxelize(gt, resolution, origin);
  if (gp.occupied.empty() && gg.occupied.empty()) return 1.0;
  std::size_t inter = 0;
  for (const auto& v : gp.occupied) inter += gg.occupied.count(v);
  const std::size_t uni = gp.size() + gg.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double voxel_iou(const PointCloud& pred, const PointCloud& gt, double resolution,
                 const Vec3& origin) {
  return voxel_iou(pred.points, gt.points, resolution, origin);
}

std::string csv_header() { return "scan_id,cd,jsd_bev,jsd_3d,iou@0.5,iou@0.2,iou@0.1"; }

std::string MetricReport::to_json() const {
  nlohmann::ordered_json j;
  j["scan_id"] = scan_id;
  j["cd"] = cd;
  j["jsd_bev"] = jsd_bev;
  j["jsd_3d"] = jsd_3d;
  nlohmann::ordered_json ious = nlohmann::ordered_json::object();
  for (auto it = iou.rbegin(); it != iou.rend(); ++it) ious[iou_key(it->first)] = it->second;
  j["iou"] = ious;
  j["jsd_resolution"] = jsd_resolution;
  j["extent"] = extent;
  return j.dump();
}

std::string MetricReport::to_csv_row() const {
  std::ostringstream os;
  os << scan_id << ',' << format_double(cd) << ',' << format_double(jsd_bev) << ','
     << format_double(jsd_3d);
  for (double res : {0.5, 0.2, 0.1}) {
    os << ',';
    const auto it = iou.find(res);
    if (it != iou.end()) os << format_double(it->second);
  }
  return os.str();
}

MetricReport evaluate(const PointCloud& pred, const PointCloud& gt, const MetricOptions& opts,
                      std::string scan_id) {
  MetricReport r;
  r.scan_id = std::move(scan_id);
  r.jsd_resolution = opts.jsd_resolution;
  r.extent = opts.extent;
  r.cd = chamfer(pred, gt);
  r.jsd_bev = jsd(pred, gt, JsdMode::Bev, opts.jsd_resolution, opts.extent);
  r.jsd_3d = jsd(pred, gt, JsdMode::ThreeD, opts.jsd_resolution, opts.extent);
  for (double res : opts.iou_resolutions) {
    r.iou[res] = voxel_iou(pred, gt, res, snapped_origin(opts.extent, res));
  }
  return r;
}

}  // namespace lidpm
