#include "lidpm/denoiser.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace lidpm {

void Denoiser::check_query(const DenoiserQuery& q) const {
  const double T = schedule().steps();
  if (!(q.t > 0.0 && q.t <= T)) {
    throw std::out_of_range("denoiser step " + std::to_string(q.t) + " outside (0, " +
                            std::to_string(schedule().steps()) + "]");
  }
}

GaussianOracleDenoiser::GaussianOracleDenoiser(Vec3 mean, double variance, NoiseSchedule schedule)
    : mean_(std::move(mean)), variance_(variance), schedule_(std::move(schedule)) {
  if (!(variance_ > 0.0)) throw std::invalid_argument("oracle variance must be > 0");
}

Points GaussianOracleDenoiser::predict_noise(const DenoiserQuery& q) const {
  check_query(q);
  const double ab = schedule_.alpha_bar_at(q.t);
  const double signal = std::sqrt(ab);
  const double gain = std::sqrt(1.0 - ab) / (ab * variance_ + 1.0 - ab);
  const Vec3 centre = signal * mean_;
  Points out(q.noisy.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gain * (q.noisy[i] - centre);
  return out;
}

Vec3 GaussianOracleDenoiser::flow_to_data(const Vec3& xt, double t) const {
  const double ab = schedule_.alpha_bar_at(t);
  const double marginal_std = std::sqrt(ab * variance_ + 1.0 - ab);
  return mean_ + std::sqrt(variance_) / marginal_std * (xt - std::sqrt(ab) * mean_);
}

NoiseStats component_stats(std::span<const Vec3> values) {
  if (values.empty()) return {};
  double sum = 0.0;
  for (const auto& v : values) sum += v.sum();
  const double n = 3.0 * static_cast<double>(values.size());
  const double mean = sum / n;
  double ss = 0.0;
  for (const auto& v : values) ss += (v.array() - mean).square().sum();
  return {mean, std::sqrt(ss / n)};
}

NoiseStats noise_stats(const Denoiser& d, std::span<const DenoiserQuery> queries) {
  if (queries.empty()) throw std::invalid_argument("noise_stats needs at least one query");
  Points all;
  for (const auto& q : queries) {
    Points eps = d.predict_noise(q);
    all.insert(all.end(), eps.begin(), eps.end());
  }
  return component_stats(all);
}

}  // namespace lidpm
