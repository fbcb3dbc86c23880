#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "seqvae/common.hpp"

namespace seqvae {

// Deterministic random source. mt19937_64 output is fully specified by the
// standard, and the distributions below are implemented here rather than with
// std:: distributions (whose algorithms are implementation-defined), so a
// given seed produces the same stream everywhere.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t raw() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be positive.
  uint64_t index(uint64_t n) {
    // Rejection sampling keeps the draw unbiased.
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v;
    do {
      v = engine_();
    } while (v >= limit);
    return v % n;
  }

  int64_t integer(int64_t lo, int64_t hi) {  // inclusive range
    return lo + static_cast<int64_t>(index(static_cast<uint64_t>(hi - lo + 1)));
  }

  // Standard normal via Box-Muller; caches the second deviate.
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1, u2;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Poisson count by Knuth's product method. Exact for any rate; intended for
  // the small per-bin rates of spike data (cost grows linearly with lambda).
  // Large rates are split into independent chunks so exp(-lambda) never
  // underflows.
  uint32_t poisson(double lambda) {
    if (lambda < 0.0) throw NumericError("poisson: negative rate");
    uint32_t total = 0;
    while (lambda > 32.0) {
      total += poisson_knuth(32.0);
      lambda -= 32.0;
    }
    return total + poisson_knuth(lambda);
  }

 private:
  uint32_t poisson_knuth(double lambda) {
    if (lambda <= 0.0) return 0;
    double limit = std::exp(-lambda);
    double p = 1.0;
    uint32_t k = 0;
    do {
      ++k;
      p *= uniform();
    } while (p > limit);
    return k - 1;
  }

 public:

 private:
  std::mt19937_64 engine_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace seqvae
