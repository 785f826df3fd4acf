#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

#include "lidpm/cloud.hpp"

namespace lidpm {

// Every seeded operation in the library draws from this engine.
using Rng = std::mt19937_64;

// n i.i.d. standard-normal 3-vectors, drawn point-major (x, y, z per point).
inline Points gaussian_points(std::size_t n, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Points out(n);
  for (auto& p : out) {
    const double x = normal(rng);
    const double y = normal(rng);
    const double z = normal(rng);
    p = Vec3(x, y, z);
  }
  return out;
}

}  // namespace lidpm
