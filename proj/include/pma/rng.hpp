#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace pma {

// SplitMix64 mixing step. Used both as the generator core and as the hash for
// deriving independent streams, so results never depend on call scheduling.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::uint64_t hash_mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t s = a ^ (b + 0x9E3779B97F4A7C15ULL + (a << 6) + (a >> 2));
  return splitmix64(s);
}

// Deterministic stream generator. Distribution transforms are hand-rolled so
// output bytes are identical across standard libraries and platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() { return splitmix64(state_); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller. The second value is discarded to keep
  // the stream position a pure function of the draw count.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // Uniform integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n) {
    return n == 0 ? 0 : next_u64() % n;
  }

 private:
  std::uint64_t state_;
};

// Derives an independent stream from a root seed and a path of indices,
// e.g. derive_rng(seed, {sample_index, restart_index}).
inline Rng derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = splitmix64(seed);
  for (std::uint64_t p : path) h = hash_mix(h, p);
  return Rng(h);
}

// Stable tag for labelling derived streams by purpose ("shuffle", "init", ...).
constexpr std::uint64_t stream_tag(const char* s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  while (*s) {
    h ^= static_cast<std::uint64_t>(*s++);
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace pma
