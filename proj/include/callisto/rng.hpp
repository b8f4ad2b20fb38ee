#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace callisto {

// mt19937_64 plus explicit sampling transforms. The standard distribution
// classes are implementation-defined, so seeded streams would not be stable
// across standard libraries; these transforms are.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be > 0.
  uint64_t uniform_index(uint64_t n) {
    return static_cast<uint64_t>(uniform() * static_cast<double>(n)) % n;
  }

  /// Standard normal via Box-Muller, one spare cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Weibull via inverse CDF: scale * (-ln(1-u))^(1/shape).
  double weibull(double shape, double scale) {
    double u = uniform();
    while (u >= 1.0) u = uniform();
    return scale * std::pow(-std::log1p(-u), 1.0 / shape);
  }

  /// Pareto with minimum x_min and tail index alpha.
  double pareto(double x_min, double alpha) {
    double u = uniform();
    while (u >= 1.0) u = uniform();
    return x_min / std::pow(1.0 - u, 1.0 / alpha);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace callisto
