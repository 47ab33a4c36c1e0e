#pragma once

#include <cstdint>
#include <random>

namespace mlnood {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Portable random stream: std::mt19937_64 (bit-exact across conforming
// standard libraries) seeded with splitmix64(splitmix64(seed) ^ stream).
// Uniform variates are built from the raw 64-bit output, never through the
// implementation-defined <random> distributions, so a (seed, stream) pair
// reproduces the same sequence on every platform.
class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t stream) : engine_(splitmix64(splitmix64(seed) ^ stream)) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on the open interval (0, 1): (top 53 bits + 0.5) / 2^53.
  double uniform_open() { return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53; }

  // Uniform on [0, 1): top 53 bits / 2^53.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace mlnood
