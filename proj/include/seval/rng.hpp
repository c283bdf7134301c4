#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>

namespace seval {

// Deterministic RNG used everywhere instead of std::distributions, whose
// output is implementation-defined.  The mt19937_64 engine itself is fully
// specified by the standard, so seeding + these hand-rolled draws give
// bit-identical streams across platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Unbiased draw from [0, bound) via rejection sampling.
  std::uint32_t uniform_u32(std::uint32_t bound) {
    const std::uint64_t span = static_cast<std::uint64_t>(bound);
    const std::uint64_t limit =
        std::numeric_limits<std::uint64_t>::max() / span * span;
    std::uint64_t r;
    do {
      r = next_u64();
    } while (r >= limit);
    return static_cast<std::uint32_t>(r % span);
  }

  // Uniform double in [0, 1) with 53 bits of precision.
  double uniform01() { return (next_u64() >> 11) * 0x1.0p-53; }

  // Box-Muller; one fresh pair of uniforms per call, no cached spare, so the
  // draw count per call is fixed.
  double normal(double mean = 0.0, double stddev = 1.0) {
    const double u1 = 1.0 - uniform01();  // (0, 1], keeps log finite
    const double u2 = uniform01();
    const double mag = std::sqrt(-2.0 * std::log(u1));
    constexpr double two_pi = 6.283185307179586476925286766559;
    return mean + stddev * mag * std::cos(two_pi * u2);
  }

  // Derives stream seeds (per arch, per epoch, per sample) from a base seed.
  static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    return splitmix(splitmix(a) ^ (0x9e3779b97f4a7c15ull + b));
  }

 private:
  static std::uint64_t splitmix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::mt19937_64 engine_;
};

}  // namespace seval
