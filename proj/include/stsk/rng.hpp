#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace stsk {

// splitmix64; used both as a stateless hash and to expand seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t hash_mix(std::uint64_t a, std::uint64_t b) {
    return splitmix64(a ^ splitmix64(b + 0x51'7c'c1'b7'27'22'0a'95ULL));
}

inline std::uint64_t hash_mix(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    return hash_mix(hash_mix(a, b), c);
}

// FNV-1a over bytes; stable across platforms, used for word bucketing.
inline std::uint64_t fnv1a(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Uniform double in [0,1) from a 64-bit word (53 mantissa bits).
inline double u64_to_unit(std::uint64_t x) {
    return static_cast<double>(x >> 11) * 0x1.0p-53;
}

// Stateless standard normal keyed by (seed, a, b). Call-order independent by
// construction; two hash draws feed Box-Muller.
inline double hash_normal(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    const double u1 = u64_to_unit(hash_mix(seed, a, 2 * b));
    const double u2 = u64_to_unit(hash_mix(seed, a, 2 * b + 1));
    const double r = std::sqrt(-2.0 * std::log(u1 + 1e-300));
    return r * std::cos(2.0 * 3.14159265358979323846 * u2);
}

// Stateful generator for model init / synthesis; thin wrapper so call sites
// stay short.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(splitmix64(seed)) {}

    double uniform(double lo = 0.0, double hi = 1.0) {
        return std::uniform_real_distribution<double>(lo, hi)(eng_);
    }
    double normal(double mean = 0.0, double stddev = 1.0) {
        return std::normal_distribution<double>(mean, stddev)(eng_);
    }
    std::uint64_t next_u64() { return eng_(); }
    // Uniform integer in [0, n).
    std::size_t index(std::size_t n) {
        return std::uniform_int_distribution<std::size_t>(0, n - 1)(eng_);
    }

    std::mt19937_64& engine() { return eng_; }

private:
    std::mt19937_64 eng_;
};

}  // namespace stsk
