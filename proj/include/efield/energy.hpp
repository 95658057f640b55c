#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "efield/tensor_io.hpp"

namespace efield {

/// Z = softmax_scale * Q K^T over the full L x L grid, acausal cells included.
struct LogitMatrix {
    Eigen::MatrixXd z;
    double scale_used = 1.0;

    Index length() const { return z.rows(); }
};

/// Causal energy field E_ij = Z_ij - mu_i for j <= i, where mu_i is the mean
/// of the n_i = i + 1 visible logits. Only the lower triangle is stored
/// (packed by rows); the acausal region is undefined, not zero.
struct CausalEnergyField {
    std::vector<double> packed;            // row i occupies [i(i+1)/2, i(i+1)/2 + i]
    std::vector<double> row_means;         // mu_i
    std::vector<double> row_max_abs_logit; // max_j |Z_ij| over the full row, for tolerances

    Index length() const { return static_cast<Index>(row_means.size()); }
    static std::size_t row_offset(Index i) { return static_cast<std::size_t>(i) * (i + 1) / 2; }
    std::size_t context_size(Index i) const { return static_cast<std::size_t>(i) + 1; }

    std::span<const double> row(Index i) const { return {packed.data() + row_offset(i), context_size(i)}; }
    std::span<double> row(Index i) { return {packed.data() + row_offset(i), context_size(i)}; }
    double at(Index i, Index j) const { return packed[row_offset(i) + static_cast<std::size_t>(j)]; }
};

/// Full-row centering over all L columns.
struct RowCenteredLogit {
    Eigen::MatrixXd etilde;
    Eigen::VectorXd full_row_means;
    std::vector<double> row_max_abs_logit;

    Index length() const { return etilde.rows(); }
};

struct CellIndex {
    std::uint32_t row;
    std::uint32_t col;
};

/// Row-by-row causal read-out starting at row 1; N = L(L+1)/2 - 1.
struct FlattenedSignal {
    std::vector<double> values;
    std::vector<CellIndex> index_map;

    std::size_t size() const { return values.size(); }
};

inline std::size_t flattened_length(Index length) {
    return static_cast<std::size_t>(length) * (length + 1) / 2 - 1;
}

LogitMatrix logits(const HeadTensors& head);
CausalEnergyField causal_energy(const LogitMatrix& z);
RowCenteredLogit row_centered(const LogitMatrix& z);

/// Throws AnalysisError("empty flattened signal") when L == 1.
FlattenedSignal flatten(const CausalEnergyField& e);

/// Causal read-out (rows 1..L-1, columns 0..i) of any full L x L matrix, in
/// the same order as `flatten`.
FlattenedSignal flatten_causal(const Eigen::MatrixXd& m);

/// softmax over the n_i visible entries of row i.
std::vector<double> attention_probs(const CausalEnergyField& e, Index i);

/// Max |CLR(softmax(Z_i.)) - Etilde_i.| using full-row (length L) softmax.
/// Throws AnalysisError when a probability underflows.
double clr_residual(const LogitMatrix& z);

/// Causal-row form: max |log p_ij - (1/n_i) sum_j' log p_ij' - E_ij| with p the
/// softmax of each visible row. Same underflow error as clr_residual.
double causal_clr_residual(const CausalEnergyField& e);

// Invariant measurements, each scaled by (1 + max_j |Z_ij|) of the row.
double row_sum_violation(const CausalEnergyField& e);
double row_sum_violation(const RowCenteredLogit& et);

/// Largest per-row spread of (E_ij - Etilde_ij) over the causal triangle,
/// scaled by (1 + max |values|).
double causal_offset_spread(const CausalEnergyField& e, const RowCenteredLogit& et);

double mean_diagonal_energy(const CausalEnergyField& e);
double mean_sink_energy(const CausalEnergyField& e);

} // namespace efield
