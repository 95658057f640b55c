#include "efield/spectral.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "efield/numeric.hpp"

namespace efield {

Index numerical_rank(const Eigen::VectorXd& singular_values, Index rows, Index cols) {
    if (singular_values.size() == 0 || singular_values(0) <= 0.0)
        return 0;
    const double threshold = 1e-10 * singular_values(0) * static_cast<double>(std::max(rows, cols));
    Index r = 0;
    while (r < singular_values.size() && singular_values(r) > threshold)
        ++r;
    return r;
}

ChannelDecomposition channel_decomposition(const RowCenteredLogit& et, Index head_dim) {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(et.etilde, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (svd.info() != Eigen::Success)
        throw AnalysisError(fmt::format("SVD did not converge (L = {}, d_h = {})", et.length(), head_dim));

    ChannelDecomposition dec;
    dec.full_spectrum = svd.singularValues();
    dec.numerical_rank = numerical_rank(dec.full_spectrum, et.etilde.rows(), et.etilde.cols());
    const Index r = dec.numerical_rank;
    dec.singular_values = dec.full_spectrum.head(r);
    dec.query_profiles = svd.matrixU().leftCols(r);
    dec.key_profiles = svd.matrixV().leftCols(r);
    return dec;
}

double reconstruction_error(const ChannelDecomposition& dec, const RowCenteredLogit& et) {
    const double norm = et.etilde.norm();
    if (norm == 0.0)
        return 0.0;
    const Eigen::MatrixXd rebuilt =
        dec.query_profiles * dec.singular_values.asDiagonal() * dec.key_profiles.transpose();
    return (et.etilde - rebuilt).norm() / norm;
}

double causal_reconstruction_error(const ChannelDecomposition& dec, const CausalEnergyField& e,
                                   const RowCenteredLogit& et) {
    const Index n = e.length();
    const Eigen::MatrixXd weighted = dec.query_profiles * dec.singular_values.asDiagonal();
    double worst = 0.0;
    for (Index i = 0; i < n; ++i) {
        const double offset = et.full_row_means(i) - e.row_means[i];
        const auto row = e.row(i);
        for (Index j = 0; j <= i; ++j) {
            const double model = weighted.row(i).dot(dec.key_profiles.row(j)) + offset;
            worst = std::max(worst, std::abs(row[j] - model) / (1.0 + e.row_max_abs_logit[i]));
        }
    }
    return worst;
}

namespace {

void check_channel(const ChannelDecomposition& dec, Index k) {
    if (k < 1 || k > dec.numerical_rank)
        throw std::out_of_range(fmt::format("channel {} out of range 1..{}", k, dec.numerical_rank));
}

} // namespace

std::vector<double> channel_signal(const ChannelDecomposition& dec, Index k, std::span<const CellIndex> index_map) {
    check_channel(dec, k);
    const double sigma = dec.singular_values(k - 1);
    const auto u = dec.query_profiles.col(k - 1);
    const auto v = dec.key_profiles.col(k - 1);
    std::vector<double> s(index_map.size());
    for (std::size_t t = 0; t < index_map.size(); ++t)
        s[t] = sigma * u(index_map[t].row) * v(index_map[t].col);
    return s;
}

double channel_cross_covariance(const ChannelDecomposition& dec, Index k, Index l,
                                std::span<const CellIndex> index_map, std::size_t tau) {
    check_channel(dec, k);
    check_channel(dec, l);
    const std::size_t n = index_map.size();
    if (tau >= n)
        throw std::out_of_range(fmt::format("lag {} out of range for N = {}", tau, n));
    const auto sk = channel_signal(dec, k, index_map);
    const auto sl = channel_signal(dec, l, index_map);
    std::vector<double> prod(n - tau);
    for (std::size_t t = 0; t + tau < n; ++t)
        prod[t] = sk[t] * sl[t + tau];
    return pairwise_sum(prod) / static_cast<double>(n);
}

std::vector<double> channel_covariance_sum(const ChannelDecomposition& dec, std::span<const CellIndex> index_map,
                                           std::span<const std::size_t> lags) {
    const std::size_t n = index_map.size();
    const Index r = dec.numerical_rank;
    const Eigen::MatrixXd weighted = dec.query_profiles * dec.singular_values.asDiagonal();
    constexpr std::size_t kBlock = 4096;

    // Channel signals for a block of positions: row t holds s_1(t) .. s_r(t).
    auto fill = [&](std::size_t start, std::size_t count, Eigen::MatrixXd& out) {
        out.resize(static_cast<Index>(count), r);
        for (std::size_t b = 0; b < count; ++b) {
            const CellIndex c = index_map[start + b];
            out.row(static_cast<Index>(b)) =
                weighted.row(c.row).cwiseProduct(dec.key_profiles.row(c.col));
        }
    };

    std::vector<double> sums;
    sums.reserve(lags.size());
    Eigen::MatrixXd lead;
    Eigen::MatrixXd lagged;
    for (std::size_t tau : lags) {
        if (tau >= n)
            throw std::out_of_range(fmt::format("lag {} out of range for N = {}", tau, n));
        Eigen::MatrixXd gamma = Eigen::MatrixXd::Zero(r, r);  // Gamma_kl * N
        for (std::size_t start = 0; start + tau < n; start += kBlock) {
            const std::size_t count = std::min(kBlock, n - tau - start);
            fill(start, count, lead);
            fill(start + tau, count, lagged);
            gamma.noalias() += lead.transpose() * lagged;
        }
        sums.push_back(gamma.sum() / static_cast<double>(n));
    }
    return sums;
}

AutocovarianceReport bridge_check(const CausalEnergyField& e, std::size_t tau_max) {
    const Index length = e.length();
    if (length < 2)
        throw AnalysisError("bridge check needs L >= 2");
    const FlattenedSignal sig = flatten(e);
    const std::size_t n = sig.size();

    // W(tau) accumulated row by row in a fixed order.
    std::vector<double> within_all(static_cast<std::size_t>(length), 0.0);
    for (Index i = 0; i < length; ++i) {
        const auto row = e.row(i);
        const std::size_t ni = row.size();
        if (ni <= kDirectRowLimit) {
            for (std::size_t tau = 0; tau < ni; ++tau) {
                double s = 0.0;
                for (std::size_t j = 0; j + tau < ni; ++j)
                    s += row[j] * row[j + tau];
                within_all[tau] += s;
            }
        } else {
            const auto s = lagged_products_fft(row);
            for (std::size_t tau = 0; tau < ni; ++tau)
                within_all[tau] += s[tau];
        }
    }

    AutocovarianceReport rep;
    const double energy = pairwise_sum_sq(sig.values);  // N * gamma(0)
    const double total = pairwise_sum(sig.values);
    rep.within_total = pairwise_sum(within_all);

    const std::size_t gamma_max = std::min(tau_max, n - 1);
    rep.gamma = autocovariance(sig.values, gamma_max);

    const std::size_t within_max = std::min(gamma_max, static_cast<std::size_t>(length - 1));
    rep.within.assign(within_all.begin(), within_all.begin() + static_cast<std::ptrdiff_t>(within_max + 1));
    rep.cross.resize(within_max + 1);
    for (std::size_t tau = 0; tau <= within_max; ++tau)
        rep.cross[tau] = static_cast<double>(n) * rep.gamma[tau] - rep.within[tau];

    if (energy == 0.0) {
        rep.degenerate = true;
        rep.bridge_ratio = 1.0;
        rep.global_sum_ratio = 1.0;
        return rep;
    }
    rep.bridge_ratio = rep.within_total / (energy / 2.0);
    // sum_{tau=1}^{N-1} N gamma(tau) = ((sum x)^2 - sum x^2) / 2
    const double gamma0 = energy / static_cast<double>(n);
    const double tail = (total * total - energy) / 2.0 / static_cast<double>(n);
    rep.global_sum_ratio = (gamma0 + tail) / (gamma0 / 2.0);
    return rep;
}

std::vector<double> cumulative_bridge(const FlattenedSignal& sig) {
    std::vector<double> y(sig.size() + 1, 0.0);
    double acc = 0.0;
    for (std::size_t t = 0; t < sig.size(); ++t) {
        acc += sig.values[t];
        y[t + 1] = acc;
    }
    return y;
}

} // namespace efield
