#pragma once

#include <cstdint>
#include <span>

#include "lidpm/cloud.hpp"
#include "lidpm/denoiser.hpp"
#include "lidpm/random.hpp"
#include "lidpm/sampler_global.hpp"
#include "lidpm/schedule.hpp"

namespace lidpm {

// Local (offset) diffusion baseline: points are noised around the ground
// truth rather than towards the origin.

struct LocalRegConfig {
  double lambda = 5.0;

  void validate() const;
};

struct RegLoss {
  double total = 0.0;       // mean_term + std_term
  double mean_term = 0.0;   // (component mean)^2
  double std_term = 0.0;    // (component std - 1)^2
  double weighted = 0.0;    // lambda * total
};

// p0 + sqrt(1 - ab_t) eps. The offset equals forward_noise of the zero cloud
// with the same stream, and is added to p0 in a single rounding.
Points forward_noise_local(std::span<const Vec3> p0, int t, const NoiseSchedule& sched, Rng& rng);
Points forward_noise_local(std::span<const Vec3> p0, int t, const NoiseSchedule& sched,
                           std::uint64_t seed);

RegLoss reg_loss(std::span<const Vec3> eps_hat, const LocalRegConfig& cfg);

// Reverse step using the true ground truth p0 as anchor.
Points reverse_step_local_exact(std::span<const Vec3> pt, std::span<const Vec3> p0, int t,
                                std::span<const Vec3> eps_hat, const NoiseSchedule& sched,
                                Rng& rng);
Points reverse_step_local_exact(std::span<const Vec3> pt, std::span<const Vec3> p0, int t,
                                std::span<const Vec3> eps_hat, const NoiseSchedule& sched,
                                std::uint64_t seed);

// Same update with the duplicated scan standing in for p0.
Points reverse_step_local(std::span<const Vec3> pt, std::span<const Vec3> p_s_tilde, int t,
                          std::span<const Vec3> eps_hat, const NoiseSchedule& sched, Rng& rng);
Points reverse_step_local(std::span<const Vec3> pt, std::span<const Vec3> p_s_tilde, int t,
                          std::span<const Vec3> eps_hat, const NoiseSchedule& sched,
                          std::uint64_t seed);

// p_s_tilde plus unit-variance noise.
Points make_start_local(std::span<const Vec3> p_s_tilde, Rng& rng);
Points make_start_local(std::span<const Vec3> p_s_tilde, std::uint64_t seed);

// Guided local loop from T down to 1 seeded by cfg.seed; cfg.t0 is ignored.
PointCloud sample_local(const Denoiser& d, const PointCloud& p_s, const SamplerConfig& cfg,
                        const NoiseSchedule& sched);

}  // namespace lidpm
