#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace metagnn {

using Rng = std::mt19937_64;

/// Mixes a parent seed with a stream index into an independent child seed
/// (SplitMix64 finalizer). Used to give every trial / run its own generator.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline Rng child_rng(std::uint64_t seed, std::uint64_t stream) { return Rng(derive_seed(seed, stream)); }

/// Uniform integer in [0, n).
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

/// `count` distinct elements of `pool`, in random order (partial Fisher–Yates).
template <typename T>
std::vector<T> sample_without_replacement(const std::vector<T>& pool, std::size_t count, Rng& rng) {
  std::vector<T> work = pool;
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t j = i + uniform_index(rng, work.size() - i);
    std::swap(work[i], work[j]);
  }
  work.resize(count);
  return work;
}

}  // namespace metagnn
