#pragma once

#include <cstdint>
#include <random>

namespace corrxfer {

using Rng = std::mt19937_64;

// Derives an independent stream from a base seed. splitmix64 scrambling keeps
// neighbouring seeds (seed, seed+1, ...) from producing correlated streams.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  return Rng(derive_seed(seed, stream));
}

inline int uniform_int(Rng& rng, int lo, int hi) {  // inclusive bounds
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

inline double uniform_real(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline double gaussian(Rng& rng, double mean, double stddev) {
  return std::normal_distribution<double>(mean, stddev)(rng);
}

}  // namespace corrxfer
