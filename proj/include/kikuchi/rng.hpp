#pragma once

#include <cstdint>
#include <initializer_list>

namespace kikuchi {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Order-sensitive hash of a tuple of words; used to derive per-cell and
/// per-trial seeds.
std::uint64_t hash64(std::initializer_list<std::uint64_t> words) noexcept;

/// Counter-based generator: every draw is a pure function of (key, counter),
/// so values are reproducible regardless of the order they are requested in.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t key) noexcept : key_(mix64(key ^ 0x6b696b7563686921ULL)) {}

    std::uint64_t bits(std::uint64_t counter) const noexcept { return mix64(key_ ^ mix64(counter)); }

    /// Uniform on the open interval (0, 1).
    double uniform(std::uint64_t counter) const noexcept {
        return (static_cast<double>(bits(counter) >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller on two derived uniforms.
    double normal(std::uint64_t counter) const noexcept;

    /// +1 or -1 with equal probability.
    double sign(std::uint64_t counter) const noexcept { return (bits(counter) >> 63) ? -1.0 : 1.0; }

private:
    std::uint64_t key_;
};

/// Sequential view over a CounterRng.
class RngStream {
public:
    explicit RngStream(std::uint64_t key) noexcept : rng_(key) {}

    double uniform() noexcept { return rng_.uniform(next_++); }
    double normal() noexcept { return rng_.normal(next_++); }
    double sign() noexcept { return rng_.sign(next_++); }
    std::uint64_t bits() noexcept { return rng_.bits(next_++); }

private:
    CounterRng rng_;
    std::uint64_t next_ = 0;
};

} // namespace kikuchi
