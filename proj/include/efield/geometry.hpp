#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "efield/spectral.hpp"
#include "efield/tensor_io.hpp"

namespace efield {

struct KeyGeometry {
    double mu_k = 1.0;            // L * max_j |k_j|^2 / |K|_F^2
    double frob_sq = 0.0;
    double max_row_norm_sq = 0.0;
    Index argmax_position = 0;    // lowest index on ties
    double sigma_min = 0.0;       // d_h-th singular value (0 when L < d_h)
    double sigma_max = 0.0;
    double kappa = 0.0;           // +inf when K does not span all d_h directions
    Index key_rank = 0;
    double scale_ratio = 0.0;     // |K|_F^2 / (L d_h)
};

/// Throws AnalysisError("zero key matrix") for K == 0.
KeyGeometry key_incoherence(const Eigen::MatrixXd& keys);

struct IprValue {
    double ipr = 0.0;
    double ipr_times_length = 0.0;
};

/// Inverse participation ratio of a unit vector; |‖v‖ - 1| must be <= 1e-8.
IprValue ipr(std::span<const double> v);
IprValue ipr(const Eigen::VectorXd& v);

struct DelocalizationReport {
    std::vector<double> ipr_times_length;  // per right singular vector at numerical rank
    std::vector<bool> satisfied;
    double bound = 0.0;                    // mu_K d_h^2 kappa^4 / L
    double mean_ipr_times_length = 0.0;
    double weighted_mean_ipr_times_length = 0.0;  // sigma^2-weighted
    bool rank_deficient_keys = false;
    std::size_t violations = 0;

    // Same Cauchy-Schwarz argument applied to the centered keys (I - 11^T/L) K,
    // whose column span contains every right singular vector of Etilde:
    // IPR * L <= mu_Kc * (|Kc|_F^2 / sigma_min(Kc)^2)^2.
    double centered_bound = 0.0;
    std::size_t centered_violations = 0;
};

DelocalizationReport delocalization_check(const HeadTensors& head, const ChannelDecomposition& dec);

// ---- mu_K training monitor ----

struct KeyNormRecord {
    std::string head_id;
    std::int64_t step = 0;
    std::uint64_t length = 0;
    double max_row_norm_sq = 0.0;
    double frob_sq = 0.0;
};

struct MuKAlert {
    std::string head_id;
    double mu_k = 0.0;
    std::int64_t step = 0;
};

inline constexpr double kDefaultMuKThreshold = 5.0;

/// Alert iff mu_K > threshold (strict).
std::optional<MuKAlert> evaluate_record(const KeyNormRecord& record, double threshold);

/// Parses one NDJSON line; returns nullopt and fills `error` when malformed.
std::optional<KeyNormRecord> parse_key_norm_record(std::string_view line, std::string& error);

std::string alert_to_json(const MuKAlert& alert);

struct MonitorStats {
    std::uint64_t records = 0;
    std::uint64_t alerts = 0;
    std::uint64_t skipped = 0;
};

/// Streams NDJSON records from `in`, writing alerts as NDJSON to `out` and one
/// warning line per malformed record to `warn`. Memory use is independent of
/// stream length.
MonitorStats monitor_mu_k(std::istream& in, std::ostream& out, std::ostream& warn,
                          double threshold = kDefaultMuKThreshold);

} // namespace efield
