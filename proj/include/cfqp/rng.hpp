#pragma once

#include <cstdint>
#include <random>

namespace cfqp {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Counter-based stream splitting: every (master, stream, index) triple maps to an
// independent seed, so per-sample draws do not depend on generation order.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index = 0) {
    return splitmix64(splitmix64(splitmix64(master) ^ (stream * 0xd6e8feb86659fd93ULL)) + index);
}

inline Rng make_rng(std::uint64_t master, std::uint64_t stream, std::uint64_t index = 0) {
    return Rng(derive_seed(master, stream, index));
}

namespace streams {
inline constexpr std::uint64_t sample = 1;
inline constexpr std::uint64_t model_init = 2;
inline constexpr std::uint64_t shuffle = 3;
inline constexpr std::uint64_t clustering = 4;
inline constexpr std::uint64_t counterfactual = 5;
inline constexpr std::uint64_t oracle = 6;
inline constexpr std::uint64_t fold = 7;
inline constexpr std::uint64_t corpus = 8;
}  // namespace streams

inline double normal(Rng& rng, double stddev = 1.0) {
    std::normal_distribution<double> d(0.0, 1.0);
    return stddev * d(rng);
}

inline double uniform(Rng& rng, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(rng);
}

}  // namespace cfqp
