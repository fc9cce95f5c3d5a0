#pragma once

#include <cstdint>
#include <random>

namespace bladefl {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Purpose tags keep streams for different consumers apart.
enum class Stream : std::uint64_t {
  Data = 1,
  Partition,
  Init,
  Keys,
  Lazy,
  LazySelect,
  Victim,
  DpNoise,
  Minibatch,
  Mining,
  Probe,
};

// Independent stream per (seed, purpose, client, round), so results do not
// depend on the order in which clients are processed.
inline Rng make_stream(std::uint64_t seed, Stream purpose, std::uint64_t client = 0,
                       std::uint64_t round = 0) {
  std::uint64_t s = splitmix64(seed);
  s = splitmix64(s ^ static_cast<std::uint64_t>(purpose));
  s = splitmix64(s ^ client);
  s = splitmix64(s ^ (round << 1));
  return Rng(s);
}

}  // namespace bladefl
