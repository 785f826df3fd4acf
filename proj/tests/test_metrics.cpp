#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "lidpm/kdtree.hpp"
#include "lidpm/metrics.hpp"
#include "oracles.hpp"

using namespace lidpm;

TEST_CASE("kd-tree nearest neighbour equals a linear scan") {
  const Points pts = oracle::random_points(2000, 10.0, 1);
  const Points queries = oracle::random_points(500, 12.0, 2);
  const KdTree tree(pts);
  for (const auto& q : queries) {
    CHECK(std::sqrt(tree.nearest(q).sq_dist) == oracle::nearest_distance(q, pts));
  }
  // Many coincident points.
  const Points dup(100, Vec3(1, 1, 1));
  CHECK(KdTree(dup).nearest(Vec3(1, 1, 2)).sq_dist == 1.0);
  CHECK_THROWS_AS(KdTree(Points{}), std::invalid_argument);
}

TEST_CASE("chamfer distance") {
  const Points a = oracle::random_points(300, 5.0, 3);
  CHECK(chamfer(a, a) == 0.0);
  CHECK(chamfer(Points{Vec3::Zero()}, Points{Vec3(1, 0, 0)}) == 1.0);
  CHECK_THROWS_AS(chamfer(Points{}, a), std::invalid_argument);

  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Points x = oracle::random_points(500, 5.0, 10 + seed);
    const Points y = oracle::random_points(500, 5.0, 20 + seed);
    CHECK(std::abs(chamfer(x, y) - oracle::chamfer(x, y)) < 1e-9);
    CHECK(std::abs(chamfer(x, y) - chamfer(y, x)) < 1e-12);
    Points xs = x, ys = y;
    for (auto& p : xs) p += Vec3(100.0, -3.0, 7.0);
    for (auto& p : ys) p += Vec3(100.0, -3.0, 7.0);
    CHECK(std::abs(chamfer(xs, ys) - chamfer(x, y)) < 1e-12);
  }
}

TEST_CASE("jensen-shannon divergence") {
  const Points a = oracle::random_points(400, 20.0, 4);
  CHECK(jsd(a, a, JsdMode::Bev, 0.5, 50.0) == 0.0);
  CHECK(jsd(a, a, JsdMode::ThreeD, 0.5, 50.0) == 0.0);

  Points far = a;
  for (auto& p : far) p += Vec3(60.0, 0.0, 0.0);
  CHECK(jsd(a, far, JsdMode::Bev, 0.5, 50.0) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK(jsd(a, far, JsdMode::ThreeD, 0.5, 50.0) == doctest::Approx(std::log(2.0)).epsilon(1e-14));

  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Points x = oracle::random_points(800, 5.0, 30 + seed);
    const Points y = oracle::random_points(600, 5.0, 40 + seed);
    for (bool bev : {true, false}) {
      const JsdMode mode = bev ? JsdMode::Bev : JsdMode::ThreeD;
      const double got = jsd(x, y, mode, 0.5, 50.0);
      CHECK(std::abs(got - oracle::jsd(x, y, bev, 0.5, 50.0)) < 1e-12);
      CHECK(std::abs(got - jsd(y, x, mode, 0.5, 50.0)) < 1e-12);
      CHECK(got >= 0.0);
      CHECK(got <= std::log(2.0));
    }
  }

  // BEV ignores height.
  Points lifted = a;
  for (auto& p : lifted) p.z() += 3.3;
  CHECK(jsd(a, lifted, JsdMode::Bev, 0.5, 50.0) == 0.0);
  CHECK(jsd(a, lifted, JsdMode::ThreeD, 0.5, 50.0) > 0.0);

  CHECK_THROWS_AS(jsd(Points{}, a, JsdMode::Bev, 0.5, 50.0), std::invalid_argument);
  CHECK_THROWS_AS(jsd(a, a, JsdMode::Bev, 0.0, 50.0), std::invalid_argument);
}

TEST_CASE("voxel IoU") {
  const Points a = oracle::random_points(1000, 5.0, 5);
  const Vec3 origin = snapped_origin(50.0, 0.2);
  for (double res : {0.5, 0.2, 0.1}) CHECK(voxel_iou(a, a, res, snapped_origin(50.0, res)) == 1.0);
  Points far = a;
  for (auto& p : far) p += Vec3(20.0, 0.0, 0.0);
  CHECK(voxel_iou(a, far, 0.2, origin) == 0.0);
  CHECK(voxel_iou(Points{}, Points{}, 0.2, origin) == 1.0);
  CHECK(voxel_iou(Points{}, a, 0.2, origin) == 0.0);
  CHECK_THROWS_AS(voxel_iou(a, a, 0.0, origin), std::invalid_argument);

  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Points x = oracle::random_points(1000, 2.0, 50 + seed);
    const Points y = oracle::random_points(1000, 2.0, 60 + seed);
    CHECK(voxel_iou(x, y, 0.2, origin) == oracle::iou(x, y, 0.2, origin));
    // Translating clouds and origin together by whole cells keeps the IoU.
    const Vec3 shift(0.2 * 7, -0.2 * 3, 0.2 * 11);
    Points xs = x, ys = y;
    for (auto& p : xs) p += shift;
    for (auto& p : ys) p += shift;
    CHECK(voxel_iou(xs, ys, 0.2, origin + shift) == doctest::Approx(voxel_iou(x, y, 0.2, origin)));
  }
}

TEST_CASE("metric report serialisation") {
  const PointCloud a(oracle::random_points(200, 5.0, 6));
  const PointCloud b(oracle::random_points(200, 5.0, 7));
  const MetricReport same = evaluate(a, a, MetricOptions{}, "s0");
  CHECK(same.cd == 0.0);
  CHECK(same.jsd_bev == 0.0);
  CHECK(same.jsd_3d == 0.0);
  for (double res : {0.5, 0.2, 0.1}) CHECK(same.iou.at(res) == 1.0);

  const MetricReport r = evaluate(a, b, MetricOptions{}, "pair-1");
  const std::string line = r.to_json();
  CHECK(line.find('\n') == std::string::npos);
  const auto j = nlohmann::json::parse(line);
  CHECK(j["scan_id"] == "pair-1");
  CHECK(j["cd"].get<double>() == r.cd);
  CHECK(j["iou"]["0.2"].get<double>() == r.iou.at(0.2));
  CHECK(j["jsd_resolution"].get<double>() == 0.5);
  CHECK(j["extent"].get<double>() == 50.0);

  CHECK(csv_header() == "scan_id,cd,jsd_bev,jsd_3d,iou@0.5,iou@0.2,iou@0.1");
  const std::string row = r.to_csv_row();
  CHECK(row.rfind("pair-1,", 0) == 0);
  CHECK(std::count(row.begin(), row.end(), ',') == 6);
}
