#include "efield/energy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "efield/numeric.hpp"

namespace efield {

LogitMatrix logits(const HeadTensors& head) {
    head.validate();
    LogitMatrix out;
    out.scale_used = head.softmax_scale;
    out.z.noalias() = head.q * head.k.transpose();
    out.z *= head.softmax_scale;
    for (Index i = 0; i < out.z.rows(); ++i)
        for (Index j = 0; j < out.z.cols(); ++j)
            if (!std::isfinite(out.z(i, j)))
                throw AnalysisError(fmt::format("non-finite logit at ({}, {})", i, j));
    return out;
}

namespace {

std::vector<double> row_max_abs(const Eigen::MatrixXd& z) {
    std::vector<double> m(static_cast<std::size_t>(z.rows()));
    for (Index i = 0; i < z.rows(); ++i)
        m[i] = z.row(i).cwiseAbs().maxCoeff();
    return m;
}

} // namespace

CausalEnergyField causal_energy(const LogitMatrix& z) {
    const Index n = z.length();
    CausalEnergyField e;
    e.packed.resize(CausalEnergyField::row_offset(n));
    e.row_means.resize(n);
    e.row_max_abs_logit = row_max_abs(z.z);

    std::vector<double> buf;
    for (Index i = 0; i < n; ++i) {
        auto row = e.row(i);
        for (Index j = 0; j <= i; ++j)
            row[j] = z.z(i, j);
        const double mu = pairwise_sum(row) / static_cast<double>(row.size());
        for (double& x : row)
            x -= mu;
        e.row_means[i] = mu;
    }
    // Single-entry centering is exact in principle; pin it.
    if (n > 0)
        e.packed[0] = 0.0;
    return e;
}

RowCenteredLogit row_centered(const LogitMatrix& z) {
    const Index n = z.length();
    RowCenteredLogit out;
    out.etilde.resize(n, z.z.cols());
    out.full_row_means.resize(n);
    out.row_max_abs_logit = row_max_abs(z.z);

    std::vector<double> row(static_cast<std::size_t>(z.z.cols()));
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < z.z.cols(); ++j)
            row[j] = z.z(i, j);
        const double mu = pairwise_sum(row) / static_cast<double>(row.size());
        out.full_row_means(i) = mu;
        for (Index j = 0; j < z.z.cols(); ++j)
            out.etilde(i, j) = z.z(i, j) - mu;
    }
    return out;
}

FlattenedSignal flatten(const CausalEnergyField& e) {
    const Index n = e.length();
    if (n < 2)
        throw AnalysisError("empty flattened signal");
    FlattenedSignal sig;
    const std::size_t count = flattened_length(n);
    sig.values.reserve(count);
    sig.index_map.reserve(count);
    for (Index i = 1; i < n; ++i) {
        const auto row = e.row(i);
        for (Index j = 0; j <= i; ++j) {
            sig.values.push_back(row[j]);
            sig.index_map.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j)});
        }
    }
    return sig;
}

FlattenedSignal flatten_causal(const Eigen::MatrixXd& m) {
    const Index n = m.rows();
    if (n < 2)
        throw AnalysisError("empty flattened signal");
    FlattenedSignal sig;
    sig.values.reserve(flattened_length(n));
    sig.index_map.reserve(flattened_length(n));
    for (Index i = 1; i < n; ++i) {
        for (Index j = 0; j <= i; ++j) {
            sig.values.push_back(m(i, j));
            sig.index_map.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j)});
        }
    }
    return sig;
}

std::vector<double> attention_probs(const CausalEnergyField& e, Index i) {
    if (i < 0 || i >= e.length())
        throw std::out_of_range(fmt::format("row {} out of range for L = {}", i, e.length()));
    return softmax(e.row(i));
}

double clr_residual(const LogitMatrix& z) {
    const Index n = z.z.rows();
    const Index cols = z.z.cols();
    const RowCenteredLogit et = row_centered(z);

    double worst = 0.0;
    std::vector<double> row(static_cast<std::size_t>(cols));
    std::vector<double> logp(static_cast<std::size_t>(cols));
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < cols; ++j)
            row[j] = z.z(i, j);
        const auto p = softmax(row);
        for (Index j = 0; j < cols; ++j) {
            if (!(p[j] >= std::numeric_limits<double>::min()))
                throw AnalysisError(fmt::format("row spread too large for CLR check (row {})", i));
            logp[j] = std::log(p[j]);
        }
        const double mean_log = pairwise_sum(logp) / static_cast<double>(cols);
        for (Index j = 0; j < cols; ++j)
            worst = std::max(worst, std::abs((logp[j] - mean_log) - et.etilde(i, j)));
    }
    return worst;
}

double causal_clr_residual(const CausalEnergyField& e) {
    double worst = 0.0;
    std::vector<double> logp;
    for (Index i = 0; i < e.length(); ++i) {
        const auto row = e.row(i);
        const auto p = softmax(row);
        logp.resize(p.size());
        for (std::size_t j = 0; j < p.size(); ++j) {
            if (!(p[j] >= std::numeric_limits<double>::min()))
                throw AnalysisError(fmt::format("row spread too large for CLR check (row {})", i));
            logp[j] = std::log(p[j]);
        }
        const double mean_log = pairwise_sum(logp) / static_cast<double>(logp.size());
        for (std::size_t j = 0; j < p.size(); ++j)
            worst = std::max(worst, std::abs((logp[j] - mean_log) - row[j]));
    }
    return worst;
}

double row_sum_violation(const CausalEnergyField& e) {
    double worst = 0.0;
    for (Index i = 0; i < e.length(); ++i) {
        const double s = std::abs(pairwise_sum(e.row(i)));
        worst = std::max(worst, s / (1.0 + e.row_max_abs_logit[i]));
    }
    return worst;
}

double row_sum_violation(const RowCenteredLogit& et) {
    double worst = 0.0;
    std::vector<double> row(static_cast<std::size_t>(et.etilde.cols()));
    for (Index i = 0; i < et.etilde.rows(); ++i) {
        for (Index j = 0; j < et.etilde.cols(); ++j)
            row[j] = et.etilde(i, j);
        worst = std::max(worst, std::abs(pairwise_sum(row)) / (1.0 + et.row_max_abs_logit[i]));
    }
    return worst;
}

double causal_offset_spread(const CausalEnergyField& e, const RowCenteredLogit& et) {
    double worst = 0.0;
    for (Index i = 0; i < e.length(); ++i) {
        const auto row = e.row(i);
        double lo = std::numeric_limits<double>::infinity();
        double hi = -lo;
        double scale = 0.0;
        for (Index j = 0; j <= i; ++j) {
            const double d = row[j] - et.etilde(i, j);
            lo = std::min(lo, d);
            hi = std::max(hi, d);
            scale = std::max({scale, std::abs(row[j]), std::abs(et.etilde(i, j))});
        }
        worst = std::max(worst, (hi - lo) / (1.0 + scale));
    }
    return worst;
}

double mean_diagonal_energy(const CausalEnergyField& e) {
    if (e.length() < 2)
        return 0.0;
    std::vector<double> d;
    for (Index i = 1; i < e.length(); ++i)
        d.push_back(e.at(i, i));
    return pairwise_sum(d) / static_cast<double>(d.size());
}

double mean_sink_energy(const CausalEnergyField& e) {
    if (e.length() < 2)
        return 0.0;
    std::vector<double> d;
    for (Index i = 1; i < e.length(); ++i)
        d.push_back(e.at(i, 0));
    return pairwise_sum(d) / static_cast<double>(d.size());
}

} // namespace efield
