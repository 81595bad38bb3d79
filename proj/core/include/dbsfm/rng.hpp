#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace dbsfm {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to turn (seed, stream) pairs into independent
/// engine seeds.
std::uint64_t mix64(std::uint64_t x);

/// Seed for an independent stream derived from a parent seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag);

template <typename... Streams>
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t first, Streams... rest) {
  return derive_seed(derive_seed(seed, first), static_cast<std::uint64_t>(rest)...);
}

}  // namespace dbsfm
