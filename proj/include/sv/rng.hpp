#pragma once

// Seeded random number helpers.
//
// std::uniform_real_distribution is not guaranteed to produce identical
// streams across standard library implementations, so anything that feeds
// reproducible state (parameter init, surface sampling, test fixtures) goes
// through this wrapper, which maps raw mt19937_64 output to doubles with a
// fixed bit recipe.

#include <cstdint>
#include <random>

namespace sv {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  // Uniform in [0, 1) with 53 bits of mantissa.
  double uniform01() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Multiply-shift; bias is negligible for the ranges used here (n << 2^64)
    // and the result is identical on every platform.
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(gen_()) * n) >> 64);
  }

  std::uint64_t raw() { return gen_(); }

 private:
  std::mt19937_64 gen_;
};

}  // namespace sv
