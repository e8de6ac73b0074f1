#pragma once

#include <cstdint>
#include <initializer_list>

namespace stal3d {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Counter-based key derivation: the seed for a (global seed, counters...) tuple.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> counters) {
  std::uint64_t h = splitmix64(seed);
  for (std::uint64_t c : counters) h = splitmix64(h ^ splitmix64(c + 0x632be59bd9b4e019ULL));
  return h;
}

/// Stream ids used with derive_seed.
enum class Stream : std::uint64_t {
  Placement = 1,
  Surface = 2,
  Clutter = 3,
  Noise = 4,
  Ros = 5,
  Shuffle = 6,
  DetectorInit = 7,
  DiscriminatorInit = 8,
};

constexpr std::uint64_t stream(Stream s) { return static_cast<std::uint64_t>(s); }

}  // namespace stal3d
