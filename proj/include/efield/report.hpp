#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "efield/fidelity.hpp"
#include "efield/tensor_io.hpp"
#include "efield/wavelet.hpp"

namespace efield {

enum class CheckStatus { Pass, Fail, Skipped };

std::string to_string(CheckStatus status);

/// Outcome of one invariant check on one head. `measured` and `tolerance`
/// use the same (scaled) units.
struct CheckResult {
    std::string name;
    CheckStatus status = CheckStatus::Skipped;
    double measured = 0.0;
    double tolerance = 0.0;
    bool mechanism_level = true;
    std::string note;
};

struct IprStats {
    std::vector<double> per_vector;
    double mean = 0.0;
    double weighted_mean = 0.0;
};

/// All diagnostics for one head. Optional fields that are empty carry a
/// reason in `skipped` under the same key.
struct HeadReport {
    // identity
    std::string model_id;
    std::string text_id;
    std::uint32_t layer = 0;
    std::uint32_t query_head = 0;
    std::uint32_t kv_head = 0;
    Index length = 0;
    Index head_dim = 0;
    double softmax_scale = 0.0;

    std::optional<double> mu_k;
    std::optional<double> kappa;  // may be +inf
    std::optional<double> scale_ratio;
    std::optional<IprStats> ipr;
    std::optional<double> bound;  // may be +inf
    std::optional<double> centered_bound;
    std::optional<double> bridge_ratio;
    std::optional<double> global_sum_ratio;
    // max over reported lags of |gamma_E(tau) - gamma_Etilde(tau)| / gamma_E(0)
    std::optional<double> e_vs_etilde_gap;
    std::optional<double> rho;
    std::optional<int> dwt_levels;
    std::optional<std::vector<double>> wavelet_density;
    std::optional<std::vector<FidelityCurve>> fidelity;
    std::optional<Index> rank;
    std::optional<double> diag_mean;
    std::optional<double> sink_mean;

    std::vector<CheckResult> checks;
    std::vector<std::string> flags;
    std::map<std::string, std::string> skipped;

    bool mechanism_ok() const;
    const CheckResult* find_check(const std::string& name) const;
};

std::string head_report_to_json(const HeadReport& report, int indent = 2);
HeadReport head_report_from_json(const std::string& text);

/// One CSV row per head; the header comes from `head_csv_header()`.
std::string head_csv_header();
std::string head_csv_row(std::size_t index, const HeadReport& report);

/// %.17g, with inf/nan spelled "inf", "-inf", "nan".
std::string format_real(double value);

} // namespace efield
