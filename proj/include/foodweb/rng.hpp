#pragma once

// Self-contained random number generation. std::mt19937_64 provides the
// stream; the variate transforms are hand-rolled so that chains are
// bit-reproducible across standard library implementations.

#include <cmath>
#include <cstdint>
#include <random>

namespace foodweb {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(mix(seed)) {}

  // Independent stream per chain index.
  Rng(std::uint64_t seed, std::uint64_t stream)
      : gen_(mix(mix(seed) + 0x9e3779b97f4a7c15ULL * (stream + 1))) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform on (0,1); never returns 0 or 1.
  double uniform() {
    double u = (next_u64() >> 11) * 0x1.0p-53;
    return u > 0.0 ? u : 0x1.0p-53;
  }

  double normal() {
    // Box-Muller, one value per pair of uniforms.
    double u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  // Gamma(shape, rate), mean shape/rate. Marsaglia-Tsang, with the
  // boost U^{1/shape} for shape < 1.
  double gamma(double shape, double rate) {
    if (shape < 1.0) {
      double u = uniform();
      return gamma(shape + 1.0, rate) * std::pow(u, 1.0 / shape);
    }
    double d = shape - 1.0 / 3.0;
    double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v / rate;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v)))
        return d * v / rate;
    }
  }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Rejection to avoid modulo bias.
    std::uint64_t lim = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= lim);
    return x % n;
  }

 private:
  static std::uint64_t mix(std::uint64_t x) {
    // splitmix64 finalizer.
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  std::mt19937_64 gen_;
};

}  // namespace foodweb
