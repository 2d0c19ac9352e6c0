#include "kikuchi/rng.hpp"

#include <cmath>
#include <numbers>

namespace kikuchi {

std::uint64_t hash64(std::initializer_list<std::uint64_t> words) noexcept {
    std::uint64_t h = 0x243f6a8885a308d3ULL;
    for (auto w : words) h = mix64(h ^ mix64(w + 0x13198a2e03707344ULL));
    return h;
}

double CounterRng::normal(std::uint64_t counter) const noexcept {
    const double u1 = uniform(2 * counter);
    const double u2 = uniform(2 * counter + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

} // namespace kikuchi
