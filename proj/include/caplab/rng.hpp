#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace caplab {

/// SplitMix64 finalizer. Bijective on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) noexcept {
    return mix64(a ^ mix64(b + 0x632be59bd9b4e019ULL));
}

/// Stream ids used to key independent sampling streams off one seed.
namespace stream {
inline constexpr std::uint64_t names = 1;
inline constexpr std::uint64_t diversity = 2;
inline constexpr std::uint64_t values = 3;
inline constexpr std::uint64_t attributes = 4;
inline constexpr std::uint64_t render = 5;
inline constexpr std::uint64_t schedule = 6;
inline constexpr std::uint64_t junk = 7;
inline constexpr std::uint64_t init = 8;
inline constexpr std::uint64_t sample = 9;
inline constexpr std::uint64_t tables = 10;
inline constexpr std::uint64_t mixing = 11;
}  // namespace stream

/// Counter-based generator keyed by (seed, stream id). The n-th draw is a pure
/// function of (seed, stream, n), so results never depend on call interleaving
/// across streams or threads.
class CounterRng {
public:
    constexpr CounterRng(std::uint64_t seed, std::uint64_t stream_id) noexcept
        : key_(hash_combine(seed, stream_id)) {}

    constexpr std::uint64_t next_u64() noexcept { return mix64(key_ ^ mix64(counter_++)); }

    /// Uniform integer in [0, bound). Lemire's nearly-divisionless rejection.
    constexpr std::uint64_t uniform(std::uint64_t bound) noexcept {
        if (bound <= 1) {
            return 0;
        }
        unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * bound;
        auto low = static_cast<std::uint64_t>(m);
        if (low < bound) {
            const std::uint64_t threshold = (0 - bound) % bound;
            while (low < threshold) {
                m = static_cast<unsigned __int128>(next_u64()) * bound;
                low = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    /// Uniform double in [0, 1) with 53 random bits.
    constexpr double uniform01() noexcept {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller (one value per two uniforms).
    double normal() noexcept {
        double u1 = uniform01();
        while (u1 <= 0.0) {
            u1 = uniform01();
        }
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    constexpr std::uint64_t counter() const noexcept { return counter_; }
    constexpr void seek(std::uint64_t counter) noexcept { counter_ = counter; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace caplab
