#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "twophase/stats.hpp"

namespace twophase {

// A (master seed, stream id) pair fully determines a random stream. Distinct
// stream ids give statistically independent streams, so replicates can be
// assigned streams up front and consumed from any thread in any order.
struct Seed {
  std::uint64_t master = 0;
  std::uint64_t stream = 0;
};

namespace detail {
// splitmix64 finalizer.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
}  // namespace detail

// Derive an independent sub-stream (per replicate, per stratum, ...).
inline Seed substream(Seed s, std::uint64_t salt) {
  return Seed{s.master, detail::mix64(s.stream ^ detail::mix64(salt ^ 0x632be59bd9b4e019ULL))};
}

// Counter-based generator: output i is mix64(key + i*gamma), a pure function
// of (master, stream, i).
class Rng {
 public:
  explicit Rng(Seed s)
      : key_(detail::mix64(s.master) ^
             detail::mix64(detail::mix64(s.stream) + 0x9e3779b97f4a7c15ULL)) {}

  std::uint64_t next_u64() {
    ++counter_;
    return detail::mix64(key_ + counter_ * 0x9e3779b97f4a7c15ULL);
  }

  // Uniform on [0, 1), 53-bit resolution.
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform on (0, 1), never exactly 0 or 1; safe for inverse-CDF sampling.
  double uniform01_open() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  // Uniform integer on [0, n). Lemire's multiply-shift with rejection.
  std::uint64_t uniform_below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_below: n must be positive");
    std::uint64_t x = next_u64();
    __uint128_t m = static_cast<__uint128_t>(x) * n;
    auto lo = static_cast<std::uint64_t>(m);
    if (lo < n) {
      const std::uint64_t t = -n % n;
      while (lo < t) {
        x = next_u64();
        m = static_cast<__uint128_t>(x) * n;
        lo = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  bool bernoulli(double q) { return uniform01() < q; }

  double normal(double mean = 0.0, double sd = 1.0) {
    return mean + sd * normal_quantile(uniform01_open());
  }

  // Marsaglia-Tsang; shape < 1 handled by the boost relation.
  double gamma(double shape, double scale) {
    if (!(shape > 0.0) || !(scale > 0.0)) throw std::invalid_argument("gamma: bad parameters");
    if (shape < 1.0) {
      const double u = uniform01_open();
      return gamma(shape + 1.0, scale) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform01_open();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v * scale;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v * scale;
    }
  }

  // Pareto with minimum xm > 0 and tail index alpha > 0.
  double pareto(double alpha, double xm) {
    if (!(alpha > 0.0) || !(xm > 0.0)) throw std::invalid_argument("pareto: bad parameters");
    return xm * std::pow(1.0 - uniform01(), -1.0 / alpha);
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace twophase
