#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace pvudf {

using Rng = std::mt19937_64;

/// Mixes a master seed with stream identifiers (splitmix64 finalizer) so that
/// every (seed, stream...) pair gets an independent, reproducible generator.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> streams) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(seed);
  for (std::uint64_t s : streams) h = mix(h ^ mix(s));
  return h;
}

inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> streams = {}) {
  return Rng(derive_seed(seed, streams));
}

}  // namespace pvudf
