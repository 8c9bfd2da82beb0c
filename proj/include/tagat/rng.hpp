#pragma once

#include <cstdint>
#include <random>

namespace tagat {

/// splitmix64 finalizer; used to turn arbitrary integers into well-mixed seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Combine a seed with a stream coordinate into a new independent seed.
inline std::uint64_t seed_combine(std::uint64_t seed, std::uint64_t coord) {
  return mix64(seed ^ mix64(coord));
}

/// Counter-based stream derivation: every (seed, epoch, batch, site) tuple
/// maps to a fixed seed so random draws are independent of evaluation order.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t epoch,
                                 std::uint64_t batch, std::uint64_t site) {
  std::uint64_t s = mix64(seed);
  s = seed_combine(s, epoch);
  s = seed_combine(s, batch);
  s = seed_combine(s, site);
  return s;
}

/// Stable 64-bit FNV-1a hash of a string (std::hash is not portable across
/// platforms; partition assignment must be).
inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::mt19937_64 make_rng(std::uint64_t seed) { return std::mt19937_64(seed); }

}  // namespace tagat
