#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace vsr {

using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a(std::string_view text);

// Independent, named PRNG stream: same (seed, tag) always yields the same stream.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag);
inline Rng make_rng(std::uint64_t seed, std::string_view tag) { return Rng(derive_seed(seed, tag)); }

std::string rng_state(const Rng& rng);
Rng rng_from_state(const std::string& state);

}  // namespace vsr
