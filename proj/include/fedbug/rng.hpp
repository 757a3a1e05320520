#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fedbug {

/// Named sub-streams derived from the single top-level seed.
enum class Stream : std::uint64_t {
    kModelInit = 1,
    kDataset = 2,
    kPartition = 3,
    kSampling = 4,
    kClient = 5,
    kTheoryInit = 6,
};

/// SplitMix64 finaliser.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Order-sensitive hash of a seed and a list of stream coordinates, e.g.
/// derive_seed(seed, {kClient, round, client_id}).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> parts) noexcept {
    std::uint64_t h = mix64(seed);
    for (auto p : parts) h = mix64(h ^ mix64(p + 0x632be59bd9b4e019ULL));
    return h;
}

inline std::mt19937_64 make_stream(std::uint64_t seed, Stream stream,
                                   std::uint64_t a = 0, std::uint64_t b = 0) {
    return std::mt19937_64(derive_seed(seed, {static_cast<std::uint64_t>(stream), a, b}));
}

}  // namespace fedbug
