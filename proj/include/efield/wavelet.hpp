#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace efield {

/// 8-tap Daubechies (db4) orthonormal analysis low-pass filter.
extern const std::array<double, 8> kDb4Lowpass;

/// Decomposition depth: auto = floor(log2(N/8)) capped at 12 (coarsest level
/// keeps >= 8 coefficients), full = ceil(log2(N)) (one coarsest coefficient).
struct DwtDepth {
    enum class Mode { Auto, Full, Fixed };
    Mode mode = Mode::Auto;
    int levels = 0;

    static DwtDepth automatic() { return {Mode::Auto, 0}; }
    static DwtDepth full() { return {Mode::Full, 0}; }
    static DwtDepth fixed(int levels) { return {Mode::Fixed, levels}; }
    static DwtDepth parse(const std::string& s);
    std::string to_string() const;
};

struct WaveletReport {
    int levels = 0;
    std::size_t padded_length = 0;
    double total_energy = 0.0;
    double approx_energy = 0.0;
    std::vector<double> detail_energy;   // index 0 is level j = 1 (finest)
    std::vector<std::size_t> detail_count;
    std::vector<double> density;         // W(j) = detail_energy / count
    double rho = 0.0;
    double parseval_residual = 0.0;
};

/// Resolves the depth for a signal of length n. Throws on bad depth.
int resolve_depth(std::size_t n, const DwtDepth& depth);

/// One periodized analysis step: x (even length) -> (approx, detail), each half length.
void dwt_step(std::span<const double> x, std::vector<double>& approx, std::vector<double>& detail);

/// Multi-level periodized db4 DWT of the zero-padded signal with energy bookkeeping.
WaveletReport dwt(std::span<const double> signal, const DwtDepth& depth);

} // namespace efield
