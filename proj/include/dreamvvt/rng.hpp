#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace dreamvvt {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Stateless counter-based generator: every draw is a pure function of
/// (seed, stream, counter), so draws can be replayed or computed out of order.
struct CounterRng {
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;
    std::uint64_t counter = 0;

    static std::uint64_t bits_at(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
        return splitmix64(splitmix64(seed ^ splitmix64(stream + 0x632be59bd9b4e019ULL)) + index);
    }
    // Uniform in [0, 1) with 53 random bits.
    static double uniform_at(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
        return static_cast<double>(bits_at(seed, stream, index) >> 11) * 0x1.0p-53;
    }
    // Box-Muller on two consecutive uniforms of a dedicated sub-counter.
    static double normal_at(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
        double u1 = uniform_at(seed, stream, 2 * index);
        double u2 = uniform_at(seed, stream, 2 * index + 1);
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    std::uint64_t next_bits() { return bits_at(seed, stream, counter++); }
    double uniform() { return uniform_at(seed, stream, counter++); }
    double normal() { return normal_at(seed, stream, counter++); }

    CounterRng fork(std::uint64_t sub_stream) const {
        return CounterRng{seed, splitmix64(stream ^ (sub_stream * 0x9e3779b97f4a7c15ULL)), 0};
    }
};

}  // namespace dreamvvt
