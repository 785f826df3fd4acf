#pragma once

#include <vector>

namespace lidpm {

// Signal and noise multipliers of the closed-form forward marginal at one step.
struct Scales {
  double signal;  // sqrt(alpha_bar_t)
  double noise;   // sqrt(1 - alpha_bar_t)
};

/// Variance schedule of a discrete diffusion process with steps t = 1..T.
///
/// All tables are built once at construction and the object is immutable
/// afterwards. Step indices follow the usual 1-based convention; the
/// cumulative product is extended with alpha_bar(0) = 1 so that t = 0 is the
/// noiseless identity.
class NoiseSchedule {
 public:
  /// Betas linearly spaced from beta_start (t = 1) to beta_end (t = T).
  /// Throws std::invalid_argument unless 0 < beta_start <= beta_end < 1 and T >= 2.
  static NoiseSchedule linear(double beta_start, double beta_end, int steps);

  /// Explicit beta table, betas[0] being beta_1. Each beta must lie in (0, 1).
  static NoiseSchedule from_betas(std::vector<double> betas);

  int steps() const noexcept { return static_cast<int>(betas_.size()); }

  double beta(int t) const;
  double alpha(int t) const;
  // Valid for 0 <= t <= T.
  double alpha_bar(int t) const;

  // Valid for 0 <= t <= T; t = 0 gives (1, 0).
  Scales scales(int t) const;

  // Continuous extension used by ODE solvers: log(alpha_bar) is interpolated
  // linearly between integer steps, so integer arguments reproduce the table.
  double alpha_bar_at(double t) const;

  // Half log-SNR, log(sqrt(alpha_bar) / sqrt(1 - alpha_bar)). Requires t > 0.
  double half_log_snr(double t) const;

  // Inverse of half_log_snr over (0, T].
  double time_at_half_log_snr(double lambda) const;

  const std::vector<double>& betas() const noexcept { return betas_; }
  const std::vector<double>& alpha_bars() const noexcept { return alpha_bars_; }

 private:
  explicit NoiseSchedule(std::vector<double> betas);

  void check_step(int t) const;

  std::vector<double> betas_;       // betas_[t - 1]
  std::vector<double> alphas_;      // alphas_[t - 1]
  std::vector<double> alpha_bars_;  // alpha_bars_[t], alpha_bars_[0] = 1
  std::vector<double> log_alpha_bars_;
};

// Defaults used throughout the pipeline.
inline constexpr double kDefaultBetaStart = 3.5e-5;
inline constexpr double kDefaultBetaEnd = 0.007;
inline constexpr int kDefaultSteps = 1000;

inline NoiseSchedule default_schedule() {
  return NoiseSchedule::linear(kDefaultBetaStart, kDefaultBetaEnd, kDefaultSteps);
}

}  // namespace lidpm
