#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace persurv {

// Seed for every stochastic step. Equal seeds give bit-identical streams on
// every platform: the generator and all derived distributions below are
// implemented here rather than taken from <random>, whose distributions are
// implementation-defined.
struct RngSeed {
  std::uint64_t value = 0;
};

// SplitMix64 (Steele, Lea & Flood). Reference: seed 1234567 produces
// 6457827717110365317, 3203168211198807973, 9817491932198370423, ...
class SplitMix64 {
 public:
  using result_type = std::uint64_t;

  explicit SplitMix64(RngSeed seed) : state_(seed.value) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }

  result_type operator()() noexcept {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept {
    return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, bound). bound must be positive.
  std::uint64_t below(std::uint64_t bound) noexcept {
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      const std::uint64_t x = (*this)();
      if (x >= threshold) return x % bound;
    }
  }

  // Uniform on the open interval (0, 1).
  double open_uniform() noexcept {
    return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
  }

  // Strictly positive draw.
  double exponential(double rate) noexcept { return -std::log(open_uniform()) / rate; }

  // Box-Muller; one of the pair is discarded so the stream position only
  // depends on the number of calls.
  double normal() noexcept {
    const double u1 = open_uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::uint64_t state_;
};

// Independent child seed for sub-stream `stream` of `seed`.
inline RngSeed derive_seed(RngSeed seed, std::uint64_t stream) noexcept {
  SplitMix64 mix(RngSeed{seed.value ^ (stream * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL)});
  mix();
  return RngSeed{mix()};
}

}  // namespace persurv
