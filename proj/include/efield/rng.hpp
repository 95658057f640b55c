#pragma once

#include <cstdint>

namespace efield {

/// Counter-based generator: the n-th 64-bit draw of stream `seed` is
///
///     mix(seed * 0xD1342543DE82EF95 + (n + 1) * 0x9E3779B97F4A7C15)
///
/// where mix is the SplitMix64 finalizer
///     z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
///     z ^= z >> 27; z *= 0x94D049BB133111EB;
///     z ^= z >> 31.
///
/// Uniforms take the top 53 bits: u = (x >> 11) * 2^-53. Normals come in
/// Box-Muller pairs from two consecutive draws (x1, x2):
///     u1 = ((x1 >> 11) + 1) * 2^-53 in (0, 1], u2 = (x2 >> 11) * 2^-53,
///     z0 = sqrt(-2 ln u1) cos(2 pi u2), z1 = sqrt(-2 ln u1) sin(2 pi u2).
/// All arithmetic is modulo 2^64.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed) : key_(seed * 0xD1342543DE82EF95ULL) {}

    std::uint64_t at(std::uint64_t counter) const;
    std::uint64_t next_u64() { return at(counter_++); }
    double next_uniform();
    double next_normal();

    std::uint64_t counter() const { return counter_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace efield
