#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace plasbench {

/// All randomness in the harness flows through std::mt19937_64. Seeds for
/// distinct purposes (init, data order, splits, resets) are derived from a
/// master seed with SplitMix64 so that each stream is independent and a run
/// is replayable from one integer.
using Rng = std::mt19937_64;

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// FNV-1a over a purpose label.
constexpr std::uint64_t hash_label(std::string_view label) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// derive_seed(parent, "init") ≠ derive_seed(parent, "data") for all
/// practical purposes; chaining derive_seed builds a seed tree.
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::string_view purpose) noexcept {
  return mix64(parent ^ mix64(hash_label(purpose)));
}

constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index) noexcept {
  return mix64(parent ^ mix64(index + 0x632be59bd9b4e019ULL));
}

/// Uniform index in [0, n) by rejection, independent of the standard
/// library's distribution implementation.
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = Rng::max() - (Rng::max() % bound + 1) % bound;
  std::uint64_t x = rng();
  while (x > limit) x = rng();
  return static_cast<std::size_t>(x % bound);
}

/// Uniform real in [0, 1) with 53 bits of resolution.
inline double uniform_unit(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Standard normal via Box-Muller (one value per call, no caching so the
/// stream position is a pure function of the number of calls).
double standard_normal(Rng& rng);

/// Fisher-Yates shuffle built on uniform_index.
template <typename It>
void shuffle(It first, It last, Rng& rng) {
  const auto n = static_cast<std::size_t>(last - first);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = uniform_index(rng, i);
    std::swap(first[i - 1], first[j]);
  }
}

}  // namespace plasbench
