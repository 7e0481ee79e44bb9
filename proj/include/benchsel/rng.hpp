#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace benchsel {

/// Deterministic seed splitting.
///
/// Every random stream in the library is an std::mt19937_64 seeded from
///   derive_seed(root, tag, a, b)
/// which folds an FNV-1a hash of `tag` and the two integer coordinates into
/// the root seed through splitmix64. Streams with different tags or
/// coordinates are decorrelated, and adding a new consumer (a new tag) never
/// perturbs the draws of an existing one.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t root, std::string_view tag, std::uint64_t a = 0,
                          std::uint64_t b = 0);

using Rng = std::mt19937_64;

/// Uniform integer in [0, n) by rejection; portable across standard libraries
/// (std::uniform_int_distribution is implementation-defined).
std::uint64_t uniform_below(Rng& rng, std::uint64_t n);

/// Uniform random permutation of 0..n-1 (Fisher-Yates).
std::vector<int> random_permutation(int n, Rng& rng);

}  // namespace benchsel
