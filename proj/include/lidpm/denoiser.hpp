#pragma once

#include <optional>
#include <span>
#include <vector>

#include "lidpm/cloud.hpp"
#include "lidpm/schedule.hpp"

namespace lidpm {

/// One noise-prediction request.
///
/// `t` is a diffusion step in (0, T]. Ancestral samplers pass integers; the
/// ODE solver also evaluates at fractional steps on the continuous extension
/// of the schedule. An empty `condition` stands for the all-zero
/// conditioning cloud used by classifier-free guidance.
struct DenoiserQuery {
  std::span<const Vec3> noisy;
  double t = 1.0;
  std::optional<std::span<const Vec3>> condition;
};

/// Noise predictor eps(x_t, t, condition).
class Denoiser {
 public:
  virtual ~Denoiser() = default;

  // One 3-vector per input point. Throws std::out_of_range for t outside (0, T].
  virtual Points predict_noise(const DenoiserQuery& q) const = 0;

  virtual const NoiseSchedule& schedule() const = 0;

 protected:
  void check_query(const DenoiserQuery& q) const;
};

/// Exact posterior-mean noise predictor for data distributed as N(mean, variance * I).
///
/// For x_t = sqrt(ab) x0 + sqrt(1 - ab) eps with x0 ~ N(mu, s2 I), the
/// minimiser of the denoising loss is
///   E[eps | x_t] = sqrt(1 - ab) (x_t - sqrt(ab) mu) / (ab s2 + 1 - ab).
/// The condition is ignored.
class GaussianOracleDenoiser final : public Denoiser {
 public:
  GaussianOracleDenoiser(Vec3 mean, double variance, NoiseSchedule schedule);

  Points predict_noise(const DenoiserQuery& q) const override;
  const NoiseSchedule& schedule() const override { return schedule_; }

  const Vec3& mean() const noexcept { return mean_; }
  double variance() const noexcept { return variance_; }

  // The exact probability-flow map from step t back to t = 0 for a single point.
  Vec3 flow_to_data(const Vec3& xt, double t) const;

 private:
  Vec3 mean_;
  double variance_;
  NoiseSchedule schedule_;
};

struct NoiseStats {
  double mean = 0.0;
  double std = 0.0;
};

// Mean and (population) standard deviation over every predicted noise component.
NoiseStats noise_stats(const Denoiser& d, std::span<const DenoiserQuery> queries);

// Same statistics over an already-predicted set of noise vectors.
NoiseStats component_stats(std::span<const Vec3> values);

}  // namespace lidpm
