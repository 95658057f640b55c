#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "efield/energy.hpp"

namespace efield {

enum class FidelityMethod { SvdEtilde, SvdE, TopK };
enum class FidelityDomain { Full, Causal };

std::string to_string(FidelityMethod method);

struct FidelityPoint {
    Index rank = 0;
    double value = 0.0;
};

struct FidelityCurve {
    FidelityMethod method = FidelityMethod::SvdEtilde;
    FidelityDomain domain = FidelityDomain::Full;
    std::vector<FidelityPoint> points;
};

/// F_r = 1 - |M - M_r|^2 / |M|^2 with M_r the top-r SVD truncation. For the
/// causal domain M is a zero-embedded lower-triangular field and both norms
/// are taken over j <= i only.
double svd_fidelity(const Eigen::MatrixXd& m, Index rank, FidelityDomain domain);

/// One SVD, many ranks.
std::vector<double> svd_fidelity_curve(const Eigen::MatrixXd& m, const std::vector<Index>& ranks,
                                       FidelityDomain domain);

/// Eckart-Young form 1 - sum_{k>r} sigma_k^2 / sum sigma_k^2 (full domain only).
double svd_fidelity_from_spectrum(const Eigen::VectorXd& singular_values, Index rank);

/// Keeps the k largest-magnitude entries of each causal row (ties: lowest
/// column) and measures F over the causal cells.
double topk_fidelity(const CausalEnergyField& e, Index k);

/// Causal field embedded in an L x L matrix with zeros above the diagonal.
Eigen::MatrixXd zero_embedded(const CausalEnergyField& e);

/// svd_etilde (full domain), svd_e (causal domain) and topk (k = r) curves.
std::vector<FidelityCurve> fidelity_table(const HeadTensors& head, const std::vector<Index>& ranks);

} // namespace efield
