#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "efield/energy.hpp"

namespace efield {

/// SVD channels of the row-centered logit matrix, truncated at numerical rank.
struct ChannelDecomposition {
    Eigen::VectorXd singular_values;  // sigma_1 >= ... >= sigma_r
    Eigen::MatrixXd query_profiles;   // L x r, columns u_k
    Eigen::MatrixXd key_profiles;     // L x r, columns v_k
    Index numerical_rank = 0;
    Eigen::VectorXd full_spectrum;    // every singular value, for rank diagnostics

    Index length() const { return query_profiles.rows(); }
};

/// Count of singular values above 1e-10 * sigma_1 * max(rows, cols).
Index numerical_rank(const Eigen::VectorXd& singular_values, Index rows, Index cols);

ChannelDecomposition channel_decomposition(const RowCenteredLogit& et, Index head_dim);

/// Relative Frobenius error of sum_k sigma_k u_k v_k^T against Etilde.
double reconstruction_error(const ChannelDecomposition& dec, const RowCenteredLogit& et);

/// max over the causal triangle of
/// |E_ij - (sum_k sigma_k (u_k)_i (v_k)_j + mubar_i - mu_i)| / (1 + max_j |Z_ij|).
double causal_reconstruction_error(const ChannelDecomposition& dec, const CausalEnergyField& e,
                                   const RowCenteredLogit& et);

/// s_k(t) = sigma_k (u_k)_{i(t)} (v_k)_{j(t)}; k is 1-based.
std::vector<double> channel_signal(const ChannelDecomposition& dec, Index k,
                                   std::span<const CellIndex> index_map);

/// Gamma_kl(tau) = (1/N) sum_t s_k(t) s_l(t + tau); k, l are 1-based.
double channel_cross_covariance(const ChannelDecomposition& dec, Index k, Index l,
                                std::span<const CellIndex> index_map, std::size_t tau);

/// sum_{k,l} Gamma_kl(tau) for each requested lag, evaluated pair by pair.
std::vector<double> channel_covariance_sum(const ChannelDecomposition& dec,
                                           std::span<const CellIndex> index_map,
                                           std::span<const std::size_t> lags);

/// Biased autocovariance gamma(tau) = (1/N) sum_t x_t x_{t+tau}, tau = 0..tau_max,
/// via zero-padded (>= 2N) real FFT.
std::vector<double> autocovariance(std::span<const double> signal, std::size_t tau_max);

/// Raw lagged products sum_t x_t x_{t+tau} for tau = 0..n-1 (no 1/N), via FFT.
std::vector<double> lagged_products_fft(std::span<const double> signal);

struct AutocovarianceReport {
    std::vector<double> gamma;   // gamma(0..tau_max)
    std::vector<double> within;  // W(tau), tau = 0..min(tau_max, L-1)
    std::vector<double> cross;   // X(tau) = N gamma(tau) - W(tau), same lags as `within`
    double within_total = 0.0;   // sum over all tau >= 0 of W(tau)
    double bridge_ratio = 1.0;
    double global_sum_ratio = 1.0;
    bool degenerate = false;
};

/// Rows up to this length use the direct O(n^2) per-row products; longer rows use FFT.
inline constexpr std::size_t kDirectRowLimit = 512;

/// Per-row S_i(tau), W(tau) and the two bridge ratios. Requires L >= 2.
AutocovarianceReport bridge_check(const CausalEnergyField& e, std::size_t tau_max = 0);

/// Y(0) = 0, Y(t) = sum_{s <= t} x_s; length N + 1.
std::vector<double> cumulative_bridge(const FlattenedSignal& sig);

} // namespace efield
