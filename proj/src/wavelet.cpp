#include "efield/wavelet.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "efield/error.hpp"
#include "efield/numeric.hpp"

namespace efield {

const std::array<double, 8> kDb4Lowpass = {
    0.23037781330889650,  0.71484657055291565,  0.63088076792985891,  -0.027983769416859854,
    -0.18703481171909308, 0.030841381835560764, 0.032883011666885200, -0.010597401785069032,
};

namespace {

constexpr int kAutoDepthCap = 12;
constexpr std::size_t kFilterLength = kDb4Lowpass.size();

int ceil_log2(std::size_t n) {
    int j = 0;
    while ((std::size_t{1} << j) < n)
        ++j;
    return j;
}

} // namespace

DwtDepth DwtDepth::parse(const std::string& s) {
    if (s == "auto")
        return automatic();
    if (s == "full")
        return full();
    std::size_t pos = 0;
    int levels = 0;
    try {
        levels = std::stoi(s, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos != s.size() || s.empty() || levels < 1)
        throw std::invalid_argument(fmt::format("dwt depth must be auto, full or a positive integer, got '{}'", s));
    return fixed(levels);
}

std::string DwtDepth::to_string() const {
    switch (mode) {
    case Mode::Auto: return "auto";
    case Mode::Full: return "full";
    case Mode::Fixed: return std::to_string(levels);
    }
    return "auto";
}

int resolve_depth(std::size_t n, const DwtDepth& depth) {
    if (n < kFilterLength)
        throw AnalysisError(fmt::format("signal length {} is shorter than the {}-tap filter", n, kFilterLength));
    const int deepest = ceil_log2(n);
    switch (depth.mode) {
    case DwtDepth::Mode::Auto: {
        const int j = static_cast<int>(std::floor(std::log2(static_cast<double>(n) / 8.0)));
        return std::clamp(j, 1, kAutoDepthCap);
    }
    case DwtDepth::Mode::Full:
        return deepest;
    case DwtDepth::Mode::Fixed:
        if (depth.levels < 1 || depth.levels > deepest)
            throw AnalysisError(fmt::format("insufficient length for {} levels (N = {})", depth.levels, n));
        return depth.levels;
    }
    return 1;
}

void dwt_step(std::span<const double> x, std::vector<double>& approx, std::vector<double>& detail) {
    const std::size_t m = x.size();
    if (m < 2 || m % 2 != 0)
        throw std::invalid_argument(fmt::format("dwt_step needs an even length, got {}", m));
    const std::size_t half = m / 2;
    approx.assign(half, 0.0);
    detail.assign(half, 0.0);
    for (std::size_t n = 0; n < half; ++n) {
        double a = 0.0;
        double d = 0.0;
        for (std::size_t k = 0; k < kFilterLength; ++k) {
            const double v = x[(2 * n + k) % m];
            const double hi = (k % 2 == 0 ? 1.0 : -1.0) * kDb4Lowpass[kFilterLength - 1 - k];
            a += kDb4Lowpass[k] * v;
            d += hi * v;
        }
        approx[n] = a;
        detail[n] = d;
    }
}

WaveletReport dwt(std::span<const double> signal, const DwtDepth& depth) {
    const std::size_t n = signal.size();
    const int levels = resolve_depth(n, depth);
    const std::size_t block = std::size_t{1} << levels;
    const std::size_t padded = (n + block - 1) / block * block;

    WaveletReport rep;
    rep.levels = levels;
    rep.padded_length = padded;
    rep.total_energy = pairwise_sum_sq(signal);

    std::vector<double> current(signal.begin(), signal.end());
    current.resize(padded, 0.0);
    std::vector<double> approx;
    std::vector<double> detail;
    for (int j = 1; j <= levels; ++j) {
        dwt_step(current, approx, detail);
        const double e = pairwise_sum_sq(detail);
        rep.detail_energy.push_back(e);
        rep.detail_count.push_back(detail.size());
        rep.density.push_back(e / static_cast<double>(detail.size()));
        current.swap(approx);
    }
    rep.approx_energy = pairwise_sum_sq(current);

    std::vector<double> parts(rep.detail_energy);
    parts.push_back(rep.approx_energy);
    const double coeff_energy = pairwise_sum(parts);
    if (rep.total_energy > 0.0) {
        rep.rho = rep.approx_energy / rep.total_energy;
        rep.parseval_residual = std::abs(coeff_energy - rep.total_energy) / rep.total_energy;
    } else {
        rep.rho = 0.0;
        rep.parseval_residual = coeff_energy == 0.0 ? 0.0 : 1.0;
    }
    return rep;
}

} // namespace efield
