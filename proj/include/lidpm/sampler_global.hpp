#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include "lidpm/cloud.hpp"
#include "lidpm/denoiser.hpp"
#include "lidpm/random.hpp"
#include "lidpm/schedule.hpp"

namespace lidpm {

enum class SolverOrder { First, Second };

struct SamplerConfig {
  int t0 = 300;             // reverse chain starts here (0 <= t0 <= T)
  double gamma = 6.0;       // classifier-free guidance weight
  std::size_t k_dup = 10;   // duplication factor of the sparse scan
  int steps_fast = 20;      // ODE solver steps
  SolverOrder order = SolverOrder::Second;
  std::uint64_t seed = 0;

  // Throws std::invalid_argument when a field is outside its valid range.
  void validate(const NoiseSchedule& sched) const;
};

// Per-step constants of the ancestral update
//   x_{t-1} = (x_t - eps_coef * eps) / sqrt(alpha_t) + noise_scale * z.
struct ReverseCoefficients {
  double inv_sqrt_alpha = 1.0;
  double eps_coef = 0.0;     // (1 - alpha_t) / sqrt(1 - alpha_bar_t)
  double noise_scale = 0.0;  // sqrt(beta_t), 0 at t = 1
};

ReverseCoefficients reverse_coefficients(const NoiseSchedule& sched, int t);

// Deterministic part of the ancestral update from raw alpha and alpha_bar.
inline Vec3 reverse_mean(const Vec3& xt, const Vec3& eps, double inv_sqrt_alpha, double eps_coef) {
  return inv_sqrt_alpha * (xt - eps_coef * eps);
}

// sqrt(ab_t) x0 + sqrt(1 - ab_t) eps with eps drawn from rng. t = 0 is the identity.
Points forward_noise(std::span<const Vec3> x0, int t, const NoiseSchedule& sched, Rng& rng);
Points forward_noise(std::span<const Vec3> x0, int t, const NoiseSchedule& sched, std::uint64_t seed);

// K-duplicates the preprocessed scan and noises it to step cfg.t0.
PointCloud make_start(const PointCloud& p_s, const SamplerConfig& cfg, const NoiseSchedule& sched,
                      Rng& rng);
PointCloud make_start(const PointCloud& p_s, const SamplerConfig& cfg, const NoiseSchedule& sched,
                      std::uint64_t seed);

// (1 - gamma) eps(x, t, 0) + gamma eps(x, t, condition). q.condition must be set.
Points guided_noise(const Denoiser& d, const DenoiserQuery& q, double gamma);

// One ancestral step from t to t - 1. z is drawn from rng only when t > 1.
Points reverse_step(std::span<const Vec3> xt, int t, std::span<const Vec3> eps_hat,
                    const NoiseSchedule& sched, Rng& rng);
Points reverse_step(std::span<const Vec3> xt, int t, std::span<const Vec3> eps_hat,
                    const NoiseSchedule& sched, std::uint64_t seed);

// Guided ancestral sampling from cfg.t0 down to 0, seeded by cfg.seed.
// The condition passed to the denoiser is p_s itself (not duplicated).
PointCloud sample(const Denoiser& d, const PointCloud& p_s, const SamplerConfig& cfg,
                  const NoiseSchedule& sched);

// Deterministic exponential-integrator ODE solver in half-log-SNR time,
// uniform steps from cfg.t0 to t = 1 followed by a final clean-data
// projection. cfg.seed only drives the start point.
PointCloud fast_solve(const Denoiser& d, const PointCloud& p_s, const SamplerConfig& cfg,
                      const NoiseSchedule& sched);

// Same solver from an explicit start state at step t_start.
Points solve_ode(const Denoiser& d, Points x, double t_start, std::span<const Vec3> condition,
                 double gamma, int steps, SolverOrder order, const NoiseSchedule& sched);

// Throws NumericalError naming the step when any coordinate is non-finite.
void check_finite(std::span<const Vec3> pts, double t);

}  // namespace lidpm
