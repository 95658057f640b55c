#include "efield/geometry.hpp"

#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "efield/numeric.hpp"

namespace efield {

namespace {

struct RowNormStats {
    double frob_sq = 0.0;
    double max_sq = 0.0;
    Index argmax = 0;
};

RowNormStats row_norm_stats(const Eigen::MatrixXd& m) {
    std::vector<double> norms(static_cast<std::size_t>(m.rows()));
    RowNormStats s;
    for (Index j = 0; j < m.rows(); ++j) {
        norms[j] = m.row(j).squaredNorm();
        if (norms[j] > s.max_sq) {
            s.max_sq = norms[j];
            s.argmax = j;
        }
    }
    s.frob_sq = pairwise_sum(norms);
    return s;
}

} // namespace

KeyGeometry key_incoherence(const Eigen::MatrixXd& keys) {
    const Index length = keys.rows();
    const Index dim = keys.cols();
    const RowNormStats s = row_norm_stats(keys);
    if (!(s.frob_sq > 0.0))
        throw AnalysisError("zero key matrix");

    KeyGeometry g;
    g.frob_sq = s.frob_sq;
    g.max_row_norm_sq = s.max_sq;
    g.argmax_position = s.argmax;
    g.mu_k = static_cast<double>(length) * s.max_sq / s.frob_sq;
    g.scale_ratio = s.frob_sq / static_cast<double>(length * dim);

    Eigen::BDCSVD<Eigen::MatrixXd> svd(keys);
    const Eigen::VectorXd sv = svd.singularValues();
    g.sigma_max = sv(0);
    g.key_rank = numerical_rank(sv, length, dim);
    g.sigma_min = length >= dim ? sv(dim - 1) : 0.0;
    g.kappa = g.key_rank < dim ? std::numeric_limits<double>::infinity() : g.sigma_max / g.sigma_min;
    return g;
}

IprValue ipr(std::span<const double> v) {
    const double norm = std::sqrt(pairwise_sum_sq(v));
    if (!(std::abs(norm - 1.0) <= 1e-8))
        throw AnalysisError(fmt::format("ipr requires a unit vector (norm = {:.17g})", norm));
    std::vector<double> fourth(v.size());
    for (std::size_t j = 0; j < v.size(); ++j) {
        const double sq = v[j] * v[j];
        fourth[j] = sq * sq;
    }
    IprValue out;
    out.ipr = pairwise_sum(fourth);
    out.ipr_times_length = out.ipr * static_cast<double>(v.size());
    return out;
}

IprValue ipr(const Eigen::VectorXd& v) {
    return ipr(std::span<const double>(v.data(), static_cast<std::size_t>(v.size())));
}

DelocalizationReport delocalization_check(const HeadTensors& head, const ChannelDecomposition& dec) {
    const Index length = head.length();
    const Index dim = head.head_dim();
    if (dec.length() != length)
        throw std::invalid_argument("decomposition does not belong to this head");

    const KeyGeometry g = key_incoherence(head.k);
    DelocalizationReport rep;
    rep.rank_deficient_keys = std::isinf(g.kappa);
    rep.bound = rep.rank_deficient_keys
                    ? std::numeric_limits<double>::infinity()
                    : g.mu_k * static_cast<double>(dim * dim) * std::pow(g.kappa, 4) / static_cast<double>(length);

    // Centered keys: the row space of Etilde = s Q (PK)^T lies in colspan(PK).
    const Eigen::MatrixXd centered = head.k.rowwise() - head.k.colwise().mean();
    const RowNormStats cs = row_norm_stats(centered);
    if (cs.frob_sq > 0.0) {
        Eigen::BDCSVD<Eigen::MatrixXd> svd(centered);
        const Eigen::VectorXd sv = svd.singularValues();
        const Index r = numerical_rank(sv, length, dim);
        const double mu_c = static_cast<double>(length) * cs.max_sq / cs.frob_sq;
        const double ratio = cs.frob_sq / (sv(r - 1) * sv(r - 1));
        rep.centered_bound = mu_c * ratio * ratio;
    }

    const Index r = dec.numerical_rank;
    double weighted = 0.0;
    double weight_total = 0.0;
    std::vector<double> values;
    for (Index k = 0; k < r; ++k) {
        const Eigen::VectorXd v = dec.key_profiles.col(k);
        const double value = ipr(v).ipr_times_length;
        rep.ipr_times_length.push_back(value);
        const bool ok = value <= rep.bound;
        rep.satisfied.push_back(ok);
        if (!ok)
            ++rep.violations;
        if (value > rep.centered_bound * (1.0 + 1e-9))
            ++rep.centered_violations;
        const double w = dec.singular_values(k) * dec.singular_values(k);
        weighted += w * value;
        weight_total += w;
        values.push_back(value);
    }
    if (r > 0) {
        rep.mean_ipr_times_length = pairwise_sum(values) / static_cast<double>(r);
        rep.weighted_mean_ipr_times_length = weighted / weight_total;
    }
    return rep;
}

} // namespace efield
