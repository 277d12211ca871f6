#pragma once

#include <cstdint>
#include <random>

namespace design_lab {

using Rng = std::mt19937_64;

// splitmix64 finaliser; used to derive independent child seeds.
constexpr std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0) noexcept {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Uniform on [0,1).
inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

}  // namespace design_lab
