#pragma once

// Deterministic random streams. Every stochastic component owns an Rng built
// from a master seed and a path of integer keys (chain index, draw index,
// scenario id, ...), so results never depend on scheduling.

#include <cstdint>
#include <initializer_list>
#include <random>

namespace nmaout {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) noexcept {
    std::uint64_t h = splitmix64(seed);
    for (auto k : keys) h = splitmix64(h ^ splitmix64(k + 0x632be59bd9b4e019ULL));
    return h;
}

inline Rng make_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
    std::seed_seq seq{static_cast<std::uint32_t>(derive_seed(seed, keys)),
                      static_cast<std::uint32_t>(derive_seed(seed, keys) >> 32)};
    return Rng(seq);
}

// Stream tags keep unrelated consumers of the same seed apart.
enum class StreamTag : std::uint64_t {
    chain = 1,
    replicate = 2,
    simulation = 3,
    ladder = 4,
    study_test = 5,
};

inline std::uint64_t tag(StreamTag t) noexcept { return static_cast<std::uint64_t>(t); }

}  // namespace nmaout
