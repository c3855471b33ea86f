#pragma once

#include <cstdint>
#include <random>

namespace bsm {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives an independent stream seed from (base, index); used so that every
// batch / tile / row gets its own reproducible random stream no matter which
// worker processes it.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  return splitmix64(splitmix64(base) ^ splitmix64(index + 0x51ed2701a7b2dd15ULL));
}

using Rng = std::mt19937_64;

}  // namespace bsm
