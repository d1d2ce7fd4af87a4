#pragma once

// Seeded generator shared by data synthesis, parameter init and shuffling.
//
// The engine is the 64-bit LCG  x' = 6364136223846793005 * x +
// 1442695040888963407 (mod 2^64), seeded with x0 = seed. Every derived value
// uses integer arithmetic plus one exact scaling, so sequences are identical
// on any platform and easy to reproduce in other languages:
//   next_u32()   = upper 32 bits of the advanced state
//   uniform()    = (advanced state >> 11) * 2^-53, in [0, 1)
//   below(n)     = next_u32() % n

#include <cstdint>
#include <random>

namespace pmpd {

class Rng {
 public:
  using Engine = std::linear_congruential_engine<std::uint64_t,
                                                 6364136223846793005ULL,
                                                 1442695040888963407ULL, 0ULL>;

  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  std::uint32_t next_u32() { return static_cast<std::uint32_t>(engine_() >> 32); }

  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Slightly biased for huge n; n stays tiny everywhere it is used.
  std::uint32_t below(std::uint32_t n) { return next_u32() % n; }

  // Approximate standard normal (Irwin-Hall, 12 uniforms); avoids
  // transcendental functions so results match across libm versions.
  double normal() {
    double s = 0.0;
    for (int i = 0; i < 12; ++i) s += uniform();
    return s - 6.0;
  }

 private:
  Engine engine_;
};

// Decorrelates nearby integer seeds before seeding a stream.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace pmpd
