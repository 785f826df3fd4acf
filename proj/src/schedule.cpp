#include "lidpm/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace lidpm {

NoiseSchedule NoiseSchedule::linear(double beta_start, double beta_end, int steps) {
  if (!(beta_start > 0.0)) throw std::invalid_argument("beta_start must be > 0");
  if (!(beta_end < 1.0)) throw std::invalid_argument("beta_end must be < 1");
  if (beta_start > beta_end) throw std::invalid_argument("beta_start must not exceed beta_end");
  if (steps < 2) throw std::invalid_argument("a linear schedule needs at least 2 steps");

  std::vector<double> betas(static_cast<std::size_t>(steps));
  const double span = beta_end - beta_start;
  for (int i = 0; i < steps; ++i) {
    betas[i] = beta_start + span * static_cast<double>(i) / static_cast<double>(steps - 1);
  }
  betas.back() = beta_end;
  return NoiseSchedule(std::move(betas));
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
  if (betas.empty()) throw std::invalid_argument("schedule needs at least one step");
  for (double b : betas) {
    if (!(b > 0.0 && b < 1.0)) throw std::invalid_argument("each beta must lie in (0, 1)");
  }
  return NoiseSchedule(std::move(betas));
}

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
  const std::size_t n = betas_.size();
  alphas_.resize(n);
  alpha_bars_.resize(n + 1);
  log_alpha_bars_.resize(n + 1);
  alpha_bars_[0] = 1.0;
  log_alpha_bars_[0] = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    alphas_[i] = 1.0 - betas_[i];
    alpha_bars_[i + 1] = alpha_bars_[i] * alphas_[i];
    log_alpha_bars_[i + 1] = std::log(alpha_bars_[i + 1]);
  }
}

void NoiseSchedule::check_step(int t) const {
  if (t < 1 || t > steps()) {
    throw std::out_of_range("step " + std::to_string(t) + " outside 1.." + std::to_string(steps()));
  }
}

double NoiseSchedule::beta(int t) const {
  check_step(t);
  return betas_[t - 1];
}

double NoiseSchedule::alpha(int t) const {
  check_step(t);
  return alphas_[t - 1];
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t > steps()) {
    throw std::out_of_range("step " + std::to_string(t) + " outside 0.." + std::to_string(steps()));
  }
  return alpha_bars_[t];
}

Scales NoiseSchedule::scales(int t) const {
  const double ab = alpha_bar(t);
  return {std::sqrt(ab), std::sqrt(1.0 - ab)};
}

double NoiseSchedule::alpha_bar_at(double t) const {
  if (!(t >= 0.0 && t <= steps())) {
    throw std::out_of_range("continuous step " + std::to_string(t) + " outside [0, T]");
  }
  const double fl = std::floor(t);
  const auto k = static_cast<std::size_t>(fl);
  const double f = t - fl;
  if (f == 0.0) return alpha_bars_[k];
  return std::exp((1.0 - f) * log_alpha_bars_[k] + f * log_alpha_bars_[k + 1]);
}

double NoiseSchedule::half_log_snr(double t) const {
  if (!(t > 0.0)) throw std::out_of_range("half log-SNR is unbounded at t = 0");
  const double ab = alpha_bar_at(t);
  return 0.5 * (std::log(ab) - std::log1p(-ab));
}

double NoiseSchedule::time_at_half_log_snr(double lambda) const {
  // alpha_bar = sigmoid(2 lambda)
  const double log_ab = -std::log1p(std::exp(-2.0 * lambda));
  if (log_ab > 0.0 || log_ab < log_alpha_bars_.back()) {
    throw std::out_of_range("half log-SNR outside the schedule range");
  }
  // log_alpha_bars_ is strictly decreasing; find k with log_ab in [lab[k+1], lab[k]].
  auto it = std::lower_bound(log_alpha_bars_.begin(), log_alpha_bars_.end(), log_ab,
                             [](double a, double b) { return a > b; });
  auto k1 = static_cast<std::size_t>(it - log_alpha_bars_.begin());
  if (k1 == 0) return 0.0;
  if (k1 >= log_alpha_bars_.size()) k1 = log_alpha_bars_.size() - 1;
  const std::size_t k0 = k1 - 1;
  const double f = (log_alpha_bars_[k0] - log_ab) / (log_alpha_bars_[k0] - log_alpha_bars_[k1]);
  return static_cast<double>(k0) + std::clamp(f, 0.0, 1.0);
}

}  // namespace lidpm
