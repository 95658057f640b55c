#pragma once

#include <cstdint>
#include <string>

#include "efield/tensor_io.hpp"

namespace efield {

enum class SynthKind { Gaussian, Sink, Concentrated, RankDeficient, LowRankNoise };

std::string to_string(SynthKind kind);
SynthKind parse_synth_kind(const std::string& s);

struct SynthParams {
    double sink_strength = 0.0;
    double concentration_factor = 1.0;
    Index target_rank = 1;
    double noise_level = 0.0;
    Index target_position = 0;
};

/// Fixture description. (kind, L, d_h, seed, params) fully determines the
/// generated tensors; see CounterRng for the random stream.
struct SynthSpec {
    SynthKind kind = SynthKind::Gaussian;
    Index length = 64;
    Index head_dim = 8;
    std::uint64_t seed = 0;
    SynthParams params;
};

/// i.i.d. N(0, 1) entries, Q drawn row-major first, then K; scale 1/sqrt(d_h).
HeadTensors gaussian_head(const SynthSpec& spec);

/// Gaussian base with k_0 = sink_strength * mean(q_i) / |mean(q_i)|, a uniformly
/// high-energy key column at j = 0. Strength 0 leaves the Gaussian head as is.
HeadTensors sink_head(const SynthSpec& spec);

/// Gaussian base with key row `target_position` scaled by `concentration_factor`.
HeadTensors concentrated_head(const SynthSpec& spec);

/// Gaussian Q, K = A B / sqrt(r) with inner dimension r = target_rank.
HeadTensors rank_deficient_head(const SynthSpec& spec);

/// Q = Aq Rq / sqrt(r) + noise * Gq and K = Ak Rk / sqrt(r) + noise * Gk. The
/// noise draws come last, so noise_level = 0 yields the exact signal part of
/// the same seed.
HeadTensors low_rank_noise_head(const SynthSpec& spec);

HeadTensors generate(const SynthSpec& spec);

/// Bisection (<= 50 steps) for the sink strength whose mean E_{i,0} over
/// i >= 1 equals `target`.
double calibrate_sink_strength(const SynthSpec& base, double target);

/// Bisection (<= 50 steps) for the concentration factor giving mu_K = target.
double calibrate_concentration(const SynthSpec& base, double target);

std::string synth_spec_to_json(const SynthSpec& spec);
SynthSpec synth_spec_from_json(const std::string& text);

} // namespace efield
