#include "efield/rng.hpp"

#include <cmath>
#include <numbers>

namespace efield {

namespace {

constexpr double kTwoPow53Inv = 1.0 / 9007199254740992.0;

std::uint64_t splitmix_finalize(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z;
}

} // namespace

std::uint64_t CounterRng::at(std::uint64_t counter) const {
    return splitmix_finalize(key_ + (counter + 1) * 0x9E3779B97F4A7C15ULL);
}

double CounterRng::next_uniform() {
    return static_cast<double>(next_u64() >> 11) * kTwoPow53Inv;
}

double CounterRng::next_normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    const double u1 = static_cast<double>((next_u64() >> 11) + 1) * kTwoPow53Inv;
    const double u2 = static_cast<double>(next_u64() >> 11) * kTwoPow53Inv;
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
}

} // namespace efield
