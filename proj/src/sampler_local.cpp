#include "lidpm/sampler_local.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace lidpm {

namespace {

void require_same_size(std::size_t a, std::size_t b, std::size_t c) {
  if (a != b || a != c) {
    throw std::invalid_argument("cardinality mismatch: " + std::to_string(a) + ", " +
                                std::to_string(b) + ", " + std::to_string(c));
  }
}

Points shifted_reverse(std::span<const Vec3> pt, std::span<const Vec3> anchor, int t,
                       std::span<const Vec3> eps_hat, const NoiseSchedule& sched, Rng& rng) {
  require_same_size(pt.size(), anchor.size(), eps_hat.size());
  Points offsets(pt.size());
  for (std::size_t i = 0; i < pt.size(); ++i) offsets[i] = pt[i] - anchor[i];
  Points out = reverse_step(offsets, t, eps_hat, sched, rng);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = anchor[i] + out[i];
  return out;
}

}  // namespace

void LocalRegConfig::validate() const {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("lambda must be > 0");
}

Points forward_noise_local(std::span<const Vec3> p0, int t, const NoiseSchedule& sched, Rng& rng) {
  const Points zero(p0.size(), Vec3::Zero());
  Points out = forward_noise(zero, t, sched, rng);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = p0[i] + out[i];
  return out;
}

Points forward_noise_local(std::span<const Vec3> p0, int t, const NoiseSchedule& sched,
                           std::uint64_t seed) {
  Rng rng(seed);
  return forward_noise_local(p0, t, sched, rng);
}

RegLoss reg_loss(std::span<const Vec3> eps_hat, const LocalRegConfig& cfg) {
  cfg.validate();
  if (eps_hat.empty()) throw std::invalid_argument("reg_loss needs a non-empty prediction");
  const NoiseStats s = component_stats(eps_hat);
  RegLoss r;
  r.mean_term = s.mean * s.mean;
  r.std_term = (s.std - 1.0) * (s.std - 1.0);
  r.total = r.mean_term + r.std_term;
  r.weighted = cfg.lambda * r.total;
  return r;
}

Points reverse_step_local_exact(std::span<const Vec3> pt, std::span<const Vec3> p0, int t,
                                std::span<const Vec3> eps_hat, const NoiseSchedule& sched,
                                Rng& rng) {
  return shifted_reverse(pt, p0, t, eps_hat, sched, rng);
}

Points reverse_step_local_exact(std::span<const Vec3> pt, std::span<const Vec3> p0, int t,
                                std::span<const Vec3> eps_hat, const NoiseSchedule& sched,
                                std::uint64_t seed) {
  Rng rng(seed);
  return shifted_reverse(pt, p0, t, eps_hat, sched, rng);
}

Points reverse_step_local(std::span<const Vec3> pt, std::span<const Vec3> p_s_tilde, int t,
                          std::span<const Vec3> eps_hat, const NoiseSchedule& sched, Rng& rng) {
  return shifted_reverse(pt, p_s_tilde, t, eps_hat, sched, rng);
}

Points reverse_step_local(std::span<const Vec3> pt, std::span<const Vec3> p_s_tilde, int t,
                          std::span<const Vec3> eps_hat, const NoiseSchedule& sched,
                          std::uint64_t seed) {
  Rng rng(seed);
  return shifted_reverse(pt, p_s_tilde, t, eps_hat, sched, rng);
}

Points make_start_local(std::span<const Vec3> p_s_tilde, Rng& rng) {
  if (p_s_tilde.empty()) throw std::invalid_argument("cannot start sampling from an empty scan");
  Points out = gaussian_points(p_s_tilde.size(), rng);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = p_s_tilde[i] + out[i];
  return out;
}

Points make_start_local(std::span<const Vec3> p_s_tilde, std::uint64_t seed) {
  Rng rng(seed);
  return make_start_local(p_s_tilde, rng);
}

PointCloud sample_local(const Denoiser& d, const PointCloud& p_s, const SamplerConfig& cfg,
                        const NoiseSchedule& sched) {
  if (p_s.empty()) throw std::invalid_argument("cannot start sampling from an empty scan");
  if (cfg.k_dup < 1) throw std::invalid_argument("duplication factor must be >= 1");
  Rng rng(cfg.seed);
  const PointCloud tilde = duplicate_k(p_s, cfg.k_dup);
  PointCloud x(make_start_local(tilde.points, rng));
  const int T = sched.steps();
  check_finite(x.points, T);
  for (int t = T; t >= 1; --t) {
    const DenoiserQuery q{x.points, static_cast<double>(t), std::span<const Vec3>(p_s.points)};
    const Points eps = guided_noise(d, q, cfg.gamma);
    x.points = reverse_step_local(x.points, tilde.points, t, eps, sched, rng);
    check_finite(x.points, t - 1);
  }
  return x;
}

}  // namespace lidpm
