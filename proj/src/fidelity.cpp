#include "efield/fidelity.hpp"

#include <algorithm>
#include <numeric>

#include <fmt/format.h>

#include "efield/numeric.hpp"

namespace efield {

std::string to_string(FidelityMethod method) {
    switch (method) {
    case FidelityMethod::SvdEtilde: return "svd_etilde";
    case FidelityMethod::SvdE: return "svd_e";
    case FidelityMethod::TopK: return "topk";
    }
    return "unknown";
}

namespace {

double masked_sq_norm(const Eigen::MatrixXd& m, FidelityDomain domain) {
    if (domain == FidelityDomain::Full)
        return m.squaredNorm();
    double s = 0.0;
    for (Index i = 0; i < m.rows(); ++i)
        for (Index j = 0; j <= std::min(i, m.cols() - 1); ++j)
            s += m(i, j) * m(i, j);
    return s;
}

} // namespace

std::vector<double> svd_fidelity_curve(const Eigen::MatrixXd& m, const std::vector<Index>& ranks,
                                       FidelityDomain domain) {
    const Index max_rank = std::min(m.rows(), m.cols());
    for (Index r : ranks)
        if (r < 1 || r > max_rank)
            throw std::invalid_argument(fmt::format("rank {} outside 1..{}", r, max_rank));
    const double total = masked_sq_norm(m, domain);
    if (!(total > 0.0))
        throw AnalysisError("undefined fidelity for a zero matrix");

    Eigen::BDCSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (svd.info() != Eigen::Success)
        throw AnalysisError("SVD did not converge in fidelity evaluation");
    std::vector<double> out;
    out.reserve(ranks.size());
    for (Index r : ranks) {
        const Eigen::MatrixXd approx = svd.matrixU().leftCols(r) * svd.singularValues().head(r).asDiagonal() *
                                       svd.matrixV().leftCols(r).transpose();
        out.push_back(1.0 - masked_sq_norm(m - approx, domain) / total);
    }
    return out;
}

double svd_fidelity(const Eigen::MatrixXd& m, Index rank, FidelityDomain domain) {
    return svd_fidelity_curve(m, {rank}, domain).front();
}

double svd_fidelity_from_spectrum(const Eigen::VectorXd& singular_values, Index rank) {
    const double total = singular_values.squaredNorm();
    if (!(total > 0.0))
        throw AnalysisError("undefined fidelity for a zero matrix");
    const Index r = std::min<Index>(rank, singular_values.size());
    return 1.0 - singular_values.tail(singular_values.size() - r).squaredNorm() / total;
}

double topk_fidelity(const CausalEnergyField& e, Index k) {
    if (k < 1)
        throw std::invalid_argument("top-k needs k >= 1");
    std::vector<double> residual_rows;
    std::vector<std::size_t> order;
    for (Index i = 0; i < e.length(); ++i) {
        const auto row = e.row(i);
        if (static_cast<Index>(row.size()) <= k)
            continue;
        order.resize(row.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        // Stable sort by descending magnitude keeps the lowest column on ties.
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return std::abs(row[a]) > std::abs(row[b]); });
        double dropped = 0.0;
        for (std::size_t p = static_cast<std::size_t>(k); p < order.size(); ++p)
            dropped += row[order[p]] * row[order[p]];
        residual_rows.push_back(dropped);
    }
    const double total = pairwise_sum_sq(e.packed);
    if (!(total > 0.0))
        return 1.0;
    return 1.0 - pairwise_sum(residual_rows) / total;
}

Eigen::MatrixXd zero_embedded(const CausalEnergyField& e) {
    const Index n = e.length();
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
    for (Index i = 0; i < n; ++i) {
        const auto row = e.row(i);
        for (Index j = 0; j <= i; ++j)
            m(i, j) = row[j];
    }
    return m;
}

std::vector<FidelityCurve> fidelity_table(const HeadTensors& head, const std::vector<Index>& ranks) {
    if (ranks.empty())
        throw std::invalid_argument("fidelity table needs at least one rank");
    const LogitMatrix z = logits(head);
    const RowCenteredLogit et = row_centered(z);
    const CausalEnergyField e = causal_energy(z);

    std::vector<FidelityCurve> curves(3);
    curves[0].method = FidelityMethod::SvdEtilde;
    curves[0].domain = FidelityDomain::Full;
    curves[1].method = FidelityMethod::SvdE;
    curves[1].domain = FidelityDomain::Causal;
    curves[2].method = FidelityMethod::TopK;
    curves[2].domain = FidelityDomain::Causal;

    const auto full = svd_fidelity_curve(et.etilde, ranks, FidelityDomain::Full);
    const auto causal = svd_fidelity_curve(zero_embedded(e), ranks, FidelityDomain::Causal);
    for (std::size_t n = 0; n < ranks.size(); ++n) {
        curves[0].points.push_back({ranks[n], full[n]});
        curves[1].points.push_back({ranks[n], causal[n]});
        curves[2].points.push_back({ranks[n], topk_fidelity(e, ranks[n])});
    }
    return curves;
}

} // namespace efield
