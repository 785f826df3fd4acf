#pragma once

#include <cmath>
#include <limits>

#include <Eigen/Eigenvalues>

#include "lidpm/denoiser.hpp"

namespace testing_support {

// Returns `uncond` for the all-zero condition and `cond` otherwise.
class PairDenoiser final : public lidpm::Denoiser {
 public:
  PairDenoiser(lidpm::Vec3 uncond, lidpm::Vec3 cond, lidpm::NoiseSchedule s)
      : uncond_(std::move(uncond)), cond_(std::move(cond)), s_(std::move(s)) {}
  lidpm::Points predict_noise(const lidpm::DenoiserQuery& q) const override {
    check_query(q);
    return lidpm::Points(q.noisy.size(), q.condition ? cond_ : uncond_);
  }
  const lidpm::NoiseSchedule& schedule() const override { return s_; }

 private:
  lidpm::Vec3 uncond_, cond_;
  lidpm::NoiseSchedule s_;
};

// Produces NaN once t drops to `bad_t`.
class NanDenoiser final : public lidpm::Denoiser {
 public:
  NanDenoiser(double bad_t, lidpm::NoiseSchedule s) : bad_t_(bad_t), s_(std::move(s)) {}
  lidpm::Points predict_noise(const lidpm::DenoiserQuery& q) const override {
    check_query(q);
    const double v = q.t <= bad_t_ ? std::numeric_limits<double>::quiet_NaN() : 0.0;
    return lidpm::Points(q.noisy.size(), lidpm::Vec3::Constant(v));
  }
  const lidpm::NoiseSchedule& schedule() const override { return s_; }

 private:
  double bad_t_;
  lidpm::NoiseSchedule s_;
};

struct PopulationStats {
  lidpm::Vec3 mean;
  Eigen::Matrix3d cov;
  lidpm::Vec3 eigenvalues;
};

inline PopulationStats population(const lidpm::Points& pts) {
  PopulationStats s;
  s.mean = lidpm::Vec3::Zero();
  for (const auto& p : pts) s.mean += p;
  s.mean /= static_cast<double>(pts.size());
  s.cov = Eigen::Matrix3d::Zero();
  for (const auto& p : pts) s.cov += (p - s.mean) * (p - s.mean).transpose();
  s.cov /= static_cast<double>(pts.size() - 1);
  s.eigenvalues = Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(s.cov).eigenvalues();
  return s;
}

}  // namespace testing_support
