#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace mfacv {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent generator for the stream identified by (seed, ids...). The
/// same key always yields the same sequence regardless of the order in which
/// streams are created.
inline Rng substream(std::uint64_t seed, std::initializer_list<std::uint64_t> ids) {
  std::uint64_t key = splitmix64(seed);
  for (std::uint64_t id : ids) key = splitmix64(key ^ splitmix64(id + 0x632be59bd9b4e019ULL));
  std::seed_seq seq{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32),
                    static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  return Rng(seq);
}

}  // namespace mfacv
