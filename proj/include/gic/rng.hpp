#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace gic {

/// FNV-1a 64-bit hash, used for stable seed derivation and config hashing.
std::uint64_t fnv1a64(std::string_view text);

/// splitmix64 finalizer; decorrelates nearby seeds.
std::uint64_t splitmix64(std::uint64_t x);

/// Derives an independent stream seed from a base seed and a stage tag,
/// e.g. derive_seed(seed, "erm") vs derive_seed(seed, "gic/head"). The same
/// (seed, tag) pair always yields the same stream.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag);

/// Engine used everywhere randomness is needed.
using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

/// Fisher-Yates shuffled index vector [0, n).
std::vector<int> shuffled_indices(int n, Rng& rng);

/// Draws k distinct entries from pool, uniformly without replacement.
/// Throws IndexError when k exceeds the pool size.
std::vector<int> sample_without_replacement(const std::vector<int>& pool, int k, Rng& rng);

/// Draws k entries from pool uniformly with replacement.
std::vector<int> sample_with_replacement(const std::vector<int>& pool, int k, Rng& rng);

} // namespace gic
