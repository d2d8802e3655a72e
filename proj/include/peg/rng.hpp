#pragma once

#include <cstdint>
#include <random>

namespace peg {

// SplitMix64 finalizer. Used as a counter-based generator: mix(key + n * gamma)
// gives the n-th draw for `key` without any hidden state.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t counter_draw(std::uint64_t key, std::uint64_t counter) {
  return splitmix64(splitmix64(key) + counter * 0x9E3779B97F4A7C15ULL);
}

// 53-bit uniform in [0, 1). Avoids std::uniform_real_distribution, whose
// output is implementation-defined.
constexpr double to_unit(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

// Seed of game `index` under `master`: counter_draw(master, index).
// Any single game can be replayed from (master, index) alone.
constexpr std::uint64_t game_seed(std::uint64_t master, std::uint64_t index) {
  return counter_draw(master, index);
}

// mt19937_64 has a fully specified output sequence, so streams are portable.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return to_unit(engine_()); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace peg
