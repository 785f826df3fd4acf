#include "lidpm/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>

#include "lidpm/random.hpp"

namespace lidpm {

namespace {

// Entry distance of a ray into an axis-aligned box, or +inf.
double ray_box(const Vec3& o, const Vec3& d, const Box& b) {
  double t0 = 0.0;
  double t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-12) {
      if (o[a] < b.lo[a] || o[a] > b.hi[a]) return std::numeric_limits<double>::infinity();
      continue;
    }
    double near = (b.lo[a] - o[a]) / d[a];
    double far = (b.hi[a] - o[a]) / d[a];
    if (near > far) std::swap(near, far);
    t0 = std::max(t0, near);
    t1 = std::min(t1, far);
    if (t0 > t1) return std::numeric_limits<double>::infinity();
  }
  return t0;
}

float intensity_for(std::uint32_t cls) {
  switch (cls) {
    case label::kRoad: return 0.25f;
    case label::kBuilding: return 0.45f;
    case label::kCar:
    case label::kMovingCar: return 0.8f;
    default: return 0.6f;
  }
}

struct Segment {
  Eigen::Vector2d a;
  Eigen::Vector2d b;
};

struct Rect {
  double x0, x1, y0, y1;
};

}  // namespace

StreetScene street_scene(std::uint64_t seed, double length) {
  if (!(length > 0.0)) throw std::invalid_argument("street length must be > 0");
  Rng rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
  StreetScene scene;
  const double half = 0.5 * length;
  for (double side : {-1.0, 1.0}) {
    double x = -half;
    while (x < half) {
      const double w = uni(8.0, 20.0);
      const double depth = uni(5.0, 8.0);
      const double near = uni(8.0, 10.0);
      const double h = uni(5.0, 15.0);
      const double y0 = side > 0 ? near : -near - depth;
      scene.boxes.push_back({Vec3(x, y0, 0.0), Vec3(x + w, y0 + depth, h), label::kBuilding});
      x += w + uni(2.0, 6.0);
    }
    x = -half + uni(0.0, 6.0);
    while (x < half) {
      const double yc = side * uni(4.8, 5.4);
      scene.boxes.push_back({Vec3(x, yc - 0.9, 0.0), Vec3(x + 4.2, yc + 0.9, 1.5), label::kCar});
      x += 4.2 + uni(2.0, 14.0);
    }
    for (double px = -half + uni(0.0, 10.0); px < half; px += uni(12.0, 20.0)) {
      const double py = side * 6.8;
      scene.boxes.push_back({Vec3(px, py - 0.15, 0.0), Vec3(px + 0.3, py + 0.15, 5.0), label::kPole});
    }
  }
  Box mover{Vec3(-12.0, -2.6, 0.0), Vec3(-7.8, -0.8, 1.5), label::kMovingCar};
  mover.velocity = Vec3(1.5, 0.0, 0.0);
  scene.boxes.push_back(mover);
  return scene;
}

ScanRecord virtual_scan(const StreetScene& scene, const Vec3& sensor_xy, const LidarPattern& pattern,
                        std::uint64_t seed, double time) {
  if (pattern.beams < 1 || pattern.azimuth_steps < 1) {
    throw std::invalid_argument("lidar pattern needs at least one beam and one azimuth step");
  }
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const Vec3 origin(sensor_xy.x(), sensor_xy.y(), pattern.sensor_height);
  std::vector<Box> boxes;
  boxes.reserve(scene.boxes.size());
  for (const auto& b : scene.boxes) boxes.push_back(b.moved(time));

  ScanRecord rec;
  std::vector<float> intensity;
  std::vector<std::uint32_t> labels;
  const double deg = std::numbers::pi / 180.0;
  for (int e = 0; e < pattern.beams; ++e) {
    const double frac = pattern.beams == 1 ? 0.0 : static_cast<double>(e) / (pattern.beams - 1);
    const double elev =
        (pattern.min_elevation_deg + frac * (pattern.max_elevation_deg - pattern.min_elevation_deg)) * deg;
    for (int a = 0; a < pattern.azimuth_steps; ++a) {
      const double az = 2.0 * std::numbers::pi * a / pattern.azimuth_steps;
      const Vec3 d(std::cos(elev) * std::cos(az), std::cos(elev) * std::sin(az), std::sin(elev));
      double best = std::numeric_limits<double>::infinity();
      std::uint32_t cls = 0;
      if (d.z() < 0.0) {
        best = -origin.z() / d.z();
        cls = label::kRoad;
      }
      for (const auto& b : boxes) {
        const double t = ray_box(origin, d, b);
        if (t < best) {
          best = t;
          cls = b.label;
        }
      }
      if (!(best >= pattern.min_range && best <= pattern.max_range)) continue;
      const double r = best + pattern.range_noise * noise(rng);
      rec.cloud.points.push_back(r * d);
      intensity.push_back(intensity_for(cls));
      labels.push_back(cls);
    }
  }
  rec.cloud.intensity = std::move(intensity);
  rec.labels = std::move(labels);
  rec.pose = Pose::Identity();
  rec.pose.topRightCorner<3, 1>() = origin;
  return rec;
}

std::vector<ScanRecord> synthetic_sequence(const StreetScene& scene, std::size_t n_scans,
                                           double spacing, const LidarPattern& pattern,
                                           std::uint64_t seed) {
  std::vector<ScanRecord> out;
  out.reserve(n_scans);
  const double start = -0.5 * spacing * (static_cast<double>(n_scans) - 1.0);
  for (std::size_t i = 0; i < n_scans; ++i) {
    const Vec3 pos(start + spacing * static_cast<double>(i), 0.0, 0.0);
    out.push_back(virtual_scan(scene, pos, pattern, seed + 7919 * i, static_cast<double>(i)));
  }
  return out;
}

TwoClusterScene two_cluster_scene(std::size_t n_dense, std::size_t n_sparse, std::uint64_t seed) {
  if (n_dense < 2 || n_sparse < 1) throw std::invalid_argument("two-cluster scene needs points");
  Rng rng(seed);
  TwoClusterScene s;
  s.hole_lo = Vec3(2.2, -2.0, -2.0);
  s.hole_hi = Vec3(4.0, 2.0, 2.0);
  const Points g = gaussian_points(n_dense, rng);
  s.dense.resize(n_dense);
  for (std::size_t i = 0; i < n_dense; ++i) {
    const double cx = i % 2 == 0 ? -2.0 : 2.0;
    s.dense[i] = Vec3(cx, 0.0, 0.0) + 0.4 * g[i];
  }
  Points visible;
  for (const auto& p : s.dense) {
    if (!s.in_hole(p)) visible.push_back(p);
  }
  const auto idx = uniform_sample_indices(visible.size(), std::min(n_sparse, visible.size()), seed + 1);
  for (auto i : idx) s.sparse.push_back(visible[i]);
  return s;
}

ShapeTemplate template_from_string(const std::string& name) {
  if (name == "straight") return ShapeTemplate::Straight;
  if (name == "crossing") return ShapeTemplate::Crossing;
  if (name == "turn") return ShapeTemplate::Turn;
  throw std::invalid_argument("unknown template '" + name + "' (straight, crossing, turn)");
}

std::string to_string(ShapeTemplate t) {
  switch (t) {
    case ShapeTemplate::Straight: return "straight";
    case ShapeTemplate::Crossing: return "crossing";
    case ShapeTemplate::Turn: return "turn";
  }
  return "straight";
}

PointCloud template_cloud(ShapeTemplate t, std::size_t n, std::uint64_t seed) {
  constexpr double L = 40.0;
  constexpr double W = 4.0;
  constexpr double kGround = -1.73;
  constexpr double kWall = 4.0;
  std::vector<Rect> road;
  std::vector<Segment> walls;
  auto seg = [](double x0, double y0, double x1, double y1) {
    return Segment{Eigen::Vector2d(x0, y0), Eigen::Vector2d(x1, y1)};
  };
  switch (t) {
    case ShapeTemplate::Straight:
      road = {{-L, L, -W, W}};
      walls = {seg(-L, W, L, W), seg(-L, -W, L, -W)};
      break;
    case ShapeTemplate::Crossing:
      road = {{-L, L, -W, W}, {-W, W, -L, L}};
      walls = {seg(-L, W, -W, W),  seg(W, W, L, W),  seg(-L, -W, -W, -W), seg(W, -W, L, -W),
               seg(W, W, W, L),    seg(-W, W, -W, L), seg(W, -L, W, -W),   seg(-W, -L, -W, -W)};
      break;
    case ShapeTemplate::Turn:
      road = {{-L, W, -W, W}, {-W, W, W, L}};
      walls = {seg(-L, -W, W, -W), seg(W, -W, W, L), seg(-L, W, -W, W), seg(-W, W, -W, L)};
      break;
  }
  std::vector<double> weights;
  double road_area = 0.0;
  double wall_length = 0.0;
  for (const auto& r : road) road_area += (r.x1 - r.x0) * (r.y1 - r.y0);
  for (const auto& s : walls) wall_length += (s.b - s.a).norm();
  for (const auto& r : road) weights.push_back(0.6 * (r.x1 - r.x0) * (r.y1 - r.y0) / road_area);
  for (const auto& s : walls) weights.push_back(0.4 * (s.b - s.a).norm() / wall_length);

  Rng rng(seed);
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  PointCloud pc;
  pc.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = pick(rng);
    const double u = u01(rng);
    const double v = u01(rng);
    if (k < road.size()) {
      const Rect& r = road[k];
      pc.points.emplace_back(r.x0 + u * (r.x1 - r.x0), r.y0 + v * (r.y1 - r.y0), kGround);
    } else {
      const Segment& s = walls[k - road.size()];
      const Eigen::Vector2d p = s.a + u * (s.b - s.a);
      pc.points.emplace_back(p.x(), p.y(), kGround + v * kWall);
    }
  }
  return pc;
}

}  // namespace lidpm
