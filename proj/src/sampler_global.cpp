#include "lidpm/sampler_global.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "lidpm/errors.hpp"

namespace lidpm {

void SamplerConfig::validate(const NoiseSchedule& sched) const {
  if (t0 < 0 || t0 > sched.steps()) {
    throw std::invalid_argument("t0 = " + std::to_string(t0) + " outside 0.." +
                                std::to_string(sched.steps()));
  }
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw std::invalid_argument("gamma must be >= 0");
  if (k_dup < 1) throw std::invalid_argument("duplication factor must be >= 1");
  if (steps_fast < 1) throw std::invalid_argument("fast solver needs at least one step");
}

ReverseCoefficients reverse_coefficients(const NoiseSchedule& sched, int t) {
  const double alpha = sched.alpha(t);
  ReverseCoefficients c;
  c.inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
  c.eps_coef = (1.0 - alpha) / std::sqrt(1.0 - sched.alpha_bar(t));
  c.noise_scale = t > 1 ? std::sqrt(sched.beta(t)) : 0.0;
  return c;
}

void check_finite(std::span<const Vec3> pts, double t) {
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (!pts[i].allFinite()) {
      throw NumericalError("non-finite point " + std::to_string(i) + " at step " + std::to_string(t),
                           t);
    }
  }
}

Points forward_noise(std::span<const Vec3> x0, int t, const NoiseSchedule& sched, Rng& rng) {
  const auto [signal, noise] = sched.scales(t);
  Points eps = gaussian_points(x0.size(), rng);
  for (std::size_t i = 0; i < x0.size(); ++i) eps[i] = signal * x0[i] + noise * eps[i];
  return eps;
}

Points forward_noise(std::span<const Vec3> x0, int t, const NoiseSchedule& sched, std::uint64_t seed) {
  Rng rng(seed);
  return forward_noise(x0, t, sched, rng);
}

PointCloud make_start(const PointCloud& p_s, const SamplerConfig& cfg, const NoiseSchedule& sched,
                      Rng& rng) {
  if (p_s.empty()) throw std::invalid_argument("cannot start sampling from an empty scan");
  cfg.validate(sched);
  const PointCloud dup = duplicate_k(p_s, cfg.k_dup);
  return PointCloud(forward_noise(dup.points, cfg.t0, sched, rng));
}

PointCloud make_start(const PointCloud& p_s, const SamplerConfig& cfg, const NoiseSchedule& sched,
                      std::uint64_t seed) {
  Rng rng(seed);
  return make_start(p_s, cfg, sched, rng);
}

Points guided_noise(const Denoiser& d, const DenoiserQuery& q, double gamma) {
  if (!q.condition) throw std::invalid_argument("guided noise needs a conditioning cloud");
  DenoiserQuery uncond = q;
  uncond.condition.reset();
  Points a = d.predict_noise(uncond);
  if (gamma == 0.0) return a;
  const Points b = d.predict_noise(q);
  const double wa = 1.0 - gamma;
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = wa * a[i] + gamma * b[i];
  return a;
}

Points reverse_step(std::span<const Vec3> xt, int t, std::span<const Vec3> eps_hat,
                    const NoiseSchedule& sched, Rng& rng) {
  if (xt.size() != eps_hat.size()) {
    throw std::invalid_argument("noise prediction has " + std::to_string(eps_hat.size()) +
                                " points, state has " + std::to_string(xt.size()));
  }
  if (t < 1) throw std::out_of_range("reverse step needs t >= 1");
  const ReverseCoefficients c = reverse_coefficients(sched, t);
  Points out(xt.size());
  for (std::size_t i = 0; i < xt.size(); ++i) {
    out[i] = reverse_mean(xt[i], eps_hat[i], c.inv_sqrt_alpha, c.eps_coef);
  }
  if (t > 1) {
    const Points z = gaussian_points(xt.size(), rng);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += c.noise_scale * z[i];
  }
  return out;
}

Points reverse_step(std::span<const Vec3> xt, int t, std::span<const Vec3> eps_hat,
                    const NoiseSchedule& sched, std::uint64_t seed) {
  Rng rng(seed);
  return reverse_step(xt, t, eps_hat, sched, rng);
}

PointCloud sample(const Denoiser& d, const PointCloud& p_s, const SamplerConfig& cfg,
                  const NoiseSchedule& sched) {
  Rng rng(cfg.seed);
  PointCloud x = make_start(p_s, cfg, sched, rng);
  check_finite(x.points, cfg.t0);
  for (int t = cfg.t0; t >= 1; --t) {
    const DenoiserQuery q{x.points, static_cast<double>(t), std::span<const Vec3>(p_s.points)};
    const Points eps = guided_noise(d, q, cfg.gamma);
    x.points = reverse_step(x.points, t, eps, sched, rng);
    check_finite(x.points, t - 1);
  }
  return x;
}

Points solve_ode(const Denoiser& d, Points x, double t_start, std::span<const Vec3> condition,
                 double gamma, int steps, SolverOrder order, const NoiseSchedule& sched) {
  if (steps < 1) throw std::invalid_argument("fast solver needs at least one step");
  if (t_start <= 0.0) return x;

  auto eps_at = [&](const Points& state, double t) {
    return guided_noise(d, DenoiserQuery{state, t, condition}, gamma);
  };
  auto signal = [&](double t) { return std::sqrt(sched.alpha_bar_at(t)); };
  auto sigma = [&](double t) { return std::sqrt(1.0 - sched.alpha_bar_at(t)); };

  constexpr double kEnd = 1.0;
  if (t_start > kEnd) {
    const double lambda_start = sched.half_log_snr(t_start);
    const double lambda_end = sched.half_log_snr(kEnd);
    const double h = (lambda_end - lambda_start) / steps;
    double t_prev = t_start;
    for (int i = 1; i <= steps; ++i) {
      const double t_next = i == steps ? kEnd : sched.time_at_half_log_snr(lambda_start + i * h);
      const double a_prev = signal(t_prev);
      const double a_next = signal(t_next);
      const double s_next = sigma(t_next);
      const Points e1 = eps_at(x, t_prev);
      Points update;
      if (order == SolverOrder::First) {
        update = e1;
      } else {
        const double t_mid = sched.time_at_half_log_snr(lambda_start + (i - 0.5) * h);
        const double a_mid = signal(t_mid);
        const double s_mid = sigma(t_mid);
        const double c_mid = s_mid * std::expm1(0.5 * h);
        Points u(x.size());
        for (std::size_t k = 0; k < x.size(); ++k) u[k] = (a_mid / a_prev) * x[k] - c_mid * e1[k];
        update = eps_at(u, t_mid);
      }
      const double c = s_next * std::expm1(h);
      for (std::size_t k = 0; k < x.size(); ++k) x[k] = (a_next / a_prev) * x[k] - c * update[k];
      check_finite(x, t_next);
      t_prev = t_next;
    }
  }

  // Clean-data projection from the last solver time.
  const double t_last = std::min(t_start, kEnd);
  const Points e = eps_at(x, t_last);
  const double a = signal(t_last);
  const double s = sigma(t_last);
  for (std::size_t k = 0; k < x.size(); ++k) x[k] = (x[k] - s * e[k]) / a;
  check_finite(x, 0.0);
  return x;
}

PointCloud fast_solve(const Denoiser& d, const PointCloud& p_s, const SamplerConfig& cfg,
                      const NoiseSchedule& sched) {
  Rng rng(cfg.seed);
  PointCloud x = make_start(p_s, cfg, sched, rng);
  check_finite(x.points, cfg.t0);
  x.points = solve_ode(d, std::move(x.points), cfg.t0, p_s.points, cfg.gamma, cfg.steps_fast,
                       cfg.order, sched);
  return x;
}

}  // namespace lidpm
