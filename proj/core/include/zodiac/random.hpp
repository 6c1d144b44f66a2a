#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

#include "zodiac/tensor.hpp"

namespace zodiac {

/// Seeded generator with platform-independent draws: only the raw
/// mt19937_64 stream is used, never the implementation-defined std
/// distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return engine_() % n; }

  double normal() {
    // Box-Muller, one draw per call.
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  Tensor uniform_tensor(Shape shape, double lo, double hi, bool requires_grad = false) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = uniform(lo, hi);
    return Tensor::from_data(std::move(shape), std::move(v), requires_grad);
  }

  Tensor normal_tensor(Shape shape, double stddev, bool requires_grad = false) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = stddev * normal();
    return Tensor::from_data(std::move(shape), std::move(v), requires_grad);
  }

  /// Glorot uniform for a [fan_in, fan_out] weight.
  Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, bool requires_grad = true) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    return uniform_tensor({fan_in, fan_out}, -limit, limit, requires_grad);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace zodiac
