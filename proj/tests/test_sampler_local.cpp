#include <doctest.h>

#include <cmath>
#include <limits>
#include <stdexcept>

#include "lidpm/sampler_local.hpp"
#include "lidpm/toy_denoiser.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace lidpm;

namespace {

Points blob(std::size_t n, std::uint64_t seed, double scale = 1.0, Vec3 shift = Vec3::Zero()) {
  Rng rng(seed);
  Points p = gaussian_points(n, rng);
  for (auto& x : p) x = shift + scale * x;
  return p;
}

std::vector<double> axis(const Points& pts, int a) {
  std::vector<double> out;
  for (const auto& p : pts) out.push_back(p[a]);
  return out;
}

}  // namespace

TEST_CASE("local forward noise") {
  const NoiseSchedule s = default_schedule();
  const Points p0 = blob(1000, 1, 20.0);
  CHECK(forward_noise_local(p0, 0, s, 3) == p0);
  CHECK_THROWS_AS(forward_noise_local(p0, 1001, s, 3), std::out_of_range);

  // Offsets are the global forward noise of the zero cloud.
  const Points zero(p0.size(), Vec3::Zero());
  for (int t : {1, 250, 1000}) {
    const Points local = forward_noise_local(p0, t, s, 99);
    const Points global = forward_noise(zero, t, s, 99);
    for (std::size_t i = 0; i < p0.size(); ++i) {
      CHECK(local[i] == Vec3(p0[i] + global[i]));
      // Subtraction recovers the offset up to the rounding of the addition.
      const double tol = 2.0 * std::numeric_limits<double>::epsilon() * (p0[i].cwiseAbs().maxCoeff() + 1.0);
      CHECK((local[i] - p0[i] - global[i]).cwiseAbs().maxCoeff() <= tol);
    }
  }
}

TEST_CASE("local forward noise at T has unit displacement") {
  const NoiseSchedule s = default_schedule();
  const Points p0 = blob(100000, 2, 5.0);
  const Points out = forward_noise_local(p0, 1000, s, 4);
  Points disp(p0.size());
  for (std::size_t i = 0; i < p0.size(); ++i) disp[i] = out[i] - p0[i];
  const double expect = std::sqrt(1.0 - s.alpha_bar(1000));
  CHECK(expect == doctest::Approx(1.0).epsilon(0.02));
  for (int a = 0; a < 3; ++a) {
    const auto m = oracle::moments(axis(disp, a));
    CHECK(std::abs(m.var - expect * expect) < 4.0 * m.se_var);
  }
}

TEST_CASE("regulariser terms") {
  const LocalRegConfig cfg;
  CHECK(cfg.lambda == 5.0);

  // Components alternate between +1 and -1: mean 0, std 1.
  Points unit;
  for (int i = 0; i < 10; ++i) unit.push_back(i % 2 ? Vec3(1, -1, 1) : Vec3(-1, 1, -1));
  const RegLoss z = reg_loss(unit, cfg);
  CHECK(z.total == 0.0);
  CHECK(z.mean_term == 0.0);
  CHECK(z.std_term == 0.0);

  const RegLoss two = reg_loss(Points(7, Vec3::Constant(2.0)), cfg);
  CHECK(two.mean_term == 4.0);
  CHECK(two.std_term == 1.0);
  CHECK(two.total == 5.0);
  CHECK(two.weighted == 25.0);

  Rng rng(5);
  const Points normal = gaussian_points(34000, rng);
  CHECK(reg_loss(normal, cfg).total < 1e-3);

  CHECK_THROWS_AS(reg_loss(Points{}, cfg), std::invalid_argument);
  CHECK_THROWS_AS(reg_loss(unit, LocalRegConfig{0.0}), std::invalid_argument);
}

TEST_CASE("exact local step is the global step on offsets") {
  const NoiseSchedule s = default_schedule();
  const Points p0 = blob(500, 6, 15.0, Vec3(3, -2, 1));
  const Points eps = blob(500, 7);
  for (int t : {1, 2, 300, 1000}) {
    const Points pt = forward_noise_local(p0, t, s, 8);
    const Points local = reverse_step_local_exact(pt, p0, t, eps, s, 55);
    Points offsets(pt.size());
    for (std::size_t i = 0; i < pt.size(); ++i) offsets[i] = pt[i] - p0[i];
    const Points global = reverse_step(offsets, t, eps, s, 55);
    for (std::size_t i = 0; i < pt.size(); ++i) CHECK(local[i] == Vec3(global[i] + p0[i]));
  }
}

TEST_CASE("exact local step against a literal coding") {
  const NoiseSchedule s = default_schedule();
  const Points p0 = blob(200, 9, 10.0);
  const Points eps = blob(200, 10);
  const int t = 420;
  const Points pt = forward_noise_local(p0, t, s, 11);
  const Points got = reverse_step_local_exact(pt, p0, t, eps, s, 12);
  Rng rng(12);
  const Points z = gaussian_points(200, rng);
  const double a = 1.0 - s.beta(t);
  double ab = 1.0;
  for (int k = 1; k <= t; ++k) ab *= 1.0 - s.beta(k);
  for (std::size_t i = 0; i < 200; ++i) {
    for (int k = 0; k < 3; ++k) {
      const double expect = p0[i][k] + (pt[i][k] - p0[i][k] - (1 - a) / std::sqrt(1 - ab) * eps[i][k]) / std::sqrt(a) +
                            std::sqrt(s.beta(t)) * z[i][k];
      CHECK(got[i][k] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("exact local step limits") {
  const NoiseSchedule tiny = NoiseSchedule::from_betas(std::vector<double>(4, 1e-14));
  const Points p0 = blob(20, 13, 4.0);
  const Points pt = blob(20, 14, 4.0);
  const Points zero(20, Vec3::Zero());
  const Points out = reverse_step_local_exact(pt, p0, 3, zero, tiny, 1);
  for (std::size_t i = 0; i < 20; ++i) CHECK((out[i] - pt[i]).norm() < 1e-5);

  const NoiseSchedule s = default_schedule();
  const Points e = blob(20, 15);
  CHECK(reverse_step_local_exact(pt, p0, 1, e, s, 1) == reverse_step_local_exact(pt, p0, 1, e, s, 2));
  CHECK_THROWS_AS(reverse_step_local_exact(pt, Points(3, Vec3::Zero()), 5, e, s, 1), std::invalid_argument);
  CHECK_THROWS_AS(reverse_step_local(pt, p0, 5, Points(2, Vec3::Zero()), s, 1), std::invalid_argument);
}

TEST_CASE("approximate local step") {
  const NoiseSchedule s = default_schedule();
  const Points p0 = blob(300, 16, 8.0);
  const Points eps = blob(300, 17);
  const int t = 500;
  const Points pt = forward_noise_local(p0, t, s, 18);
  CHECK(reverse_step_local(pt, p0, t, eps, s, 19) == reverse_step_local_exact(pt, p0, t, eps, s, 19));

  const Points tilde = blob(300, 20, 8.0);
  const Points approx = reverse_step_local(pt, tilde, t, eps, s, 19);
  const Points exact = reverse_step_local_exact(pt, p0, t, eps, s, 19);
  const double coef = std::abs(1.0 - 1.0 / std::sqrt(s.alpha(t)));
  for (std::size_t i = 0; i < 300; ++i) {
    const double gap = (approx[i] - exact[i]).norm();
    const double expect = coef * (tilde[i] - p0[i]).norm();
    CHECK(std::abs(gap - expect) <= 1e-10 * expect);
  }
}

TEST_CASE("local start") {
  const Points zero(100000, Vec3::Zero());
  const Points out = make_start_local(zero, 21);
  for (int a = 0; a < 3; ++a) {
    const auto m = oracle::moments(axis(out, a));
    CHECK(std::abs(m.var - 1.0) < 4.0 * m.se_var);
    CHECK(std::abs(m.mean) < 4.0 * m.se_mean);
  }
  Rng rng(21);
  CHECK(out == gaussian_points(100000, rng));
  CHECK(make_start_local(zero, 21) == out);
  CHECK_THROWS_AS(make_start_local(Points{}, 1), std::invalid_argument);
}

TEST_CASE("full local loop on a toy scene") {
  const NoiseSchedule s = default_schedule();
  const ToyDenoiser d(ToyDenoiserConfig{.hidden = {16}}, s, 3);
  const PointCloud p(blob(40, 22, 2.0));
  SamplerConfig c;
  c.k_dup = 3;
  c.seed = 4;
  const PointCloud out = sample_local(d, p, c, s);
  CHECK(out.size() == 120);
  for (const auto& v : out.points) CHECK(v.allFinite());
  CHECK(sample_local(d, p, c, s).points == out.points);
}
