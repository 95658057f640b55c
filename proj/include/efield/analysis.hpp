#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "efield/report.hpp"
#include "efield/synth.hpp"
#include "efield/tensor_io.hpp"
#include "efield/wavelet.hpp"

namespace efield {

struct RunConfig {
    std::size_t tau_max = 4096;
    DwtDepth dwt_depth = DwtDepth::automatic();
    std::vector<Index> fidelity_rs{5, 10, 20};
    double mu_k_threshold = 5.0;
    unsigned workers = 1;
    std::filesystem::path output_dir;
    bool write_json = true;
    bool write_csv = true;

    /// Throws std::invalid_argument naming the offending field.
    void validate() const;
};

/// Parses "json", "csv" or "json,csv" into the two format switches.
void parse_formats(const std::string& list, RunConfig& config);

/// Test-only fault: perturbs causal row sums so verification must fail.
struct FaultInjection {
    bool rowsum_bug = false;
};

/// Rows whose logit spread exceeds this are skipped by the CLR check.
inline constexpr double kClrMaxRowSpread = 500.0;

/// Runs every per-head diagnostic and invariant check. Analysis failures in
/// one stage mark that stage skipped with a reason; input errors propagate.
HeadReport analyze_head(const HeadTensors& head, const RunConfig& config, FaultInjection fault = {});

// ---- batch analysis ----

struct HeadOutcome {
    std::size_t index = 0;
    ManifestHead entry;
    std::optional<HeadReport> report;
    std::string error;       // empty when report is set
    bool io_error = false;
};

struct ModelAggregate {
    std::string model_id;
    std::size_t heads = 0;
    std::size_t mu_k_count = 0;
    double mu_k_mean = 0.0;
    double mu_k_std = 0.0;           // population
    double pct_mu_k_within = 0.0;    // % of heads with mu_K <= threshold
    std::size_t ipr_count = 0;
    double ipr_l_mean = 0.0;         // mean over heads of per-head mean IPR*L
    double ipr_l_cv = 0.0;           // std / mean, in percent
    double ipr_l_weighted_mean = 0.0;
    // method -> r -> mean F over heads
    std::map<std::string, std::map<Index, double>> fidelity_mean;
    std::size_t mechanism_failures = 0;
};

struct AggregateReport {
    double mu_k_threshold = 5.0;
    std::vector<ModelAggregate> models;  // sorted by model_id
    ModelAggregate overall;              // model_id "all"
    std::size_t errors = 0;
};

AggregateReport aggregate_reports(const std::vector<const HeadReport*>& reports, double mu_k_threshold);
std::string aggregate_to_json(const AggregateReport& agg, const std::vector<HeadOutcome>& outcomes);

struct AnalyzeResult {
    std::vector<HeadOutcome> outcomes;  // manifest order
    AggregateReport aggregate;
    int exit_code = 0;
};

/// 2 if any mechanism-level check failed, else 1 if any head hit an I/O or
/// input error, else 0.
int exit_code_for(const std::vector<HeadOutcome>& outcomes);

/// Calls fn(i) for i in [0, n) on `workers` threads; results must be stored by index.
void parallel_for(std::size_t n, unsigned workers, const std::function<void(std::size_t)>& fn);

AnalyzeResult run_analyze(const Manifest& manifest, const RunConfig& config, FaultInjection fault = {});

/// heads/head_NNNNN.json, aggregate.json and heads.csv under config.output_dir.
void write_analysis(const AnalyzeResult& result, const RunConfig& config);

// ---- verification ----

struct CheckTally {
    std::string name;
    std::size_t pass = 0;
    std::size_t fail = 0;
    std::size_t skipped = 0;
};

struct VerifySummary {
    std::vector<CheckTally> checks;  // first-seen order
    std::size_t heads = 0;
    std::size_t errors = 0;
    std::vector<std::string> error_messages;
    bool all_pass() const;
};

/// Tallies check outcomes over a set of heads produced by `source(i)`.
VerifySummary run_verify(std::size_t count, const std::function<HeadTensors(std::size_t)>& source,
                         const RunConfig& config, FaultInjection fault = {});
VerifySummary run_verify(const Manifest& manifest, const RunConfig& config, FaultInjection fault = {});
/// `count` fixtures with seeds spec.seed, spec.seed + 1, ...
VerifySummary run_verify(const SynthSpec& spec, std::size_t count, const RunConfig& config,
                         FaultInjection fault = {});

std::string format_verify_summary(const VerifySummary& summary);

// ---- synthetic batches ----

/// Writes `count` fixtures (seeds spec.seed + i, query head i) as EFT1 dumps
/// plus manifest.json into `out_dir`; returns the saved manifest.
Manifest write_synth_batch(const SynthSpec& spec, std::size_t count, const std::filesystem::path& out_dir,
                           DType dtype = DType::f64);

// ---- figure data ----

std::string field_contour_csv(const HeadTensors& head);
std::string wavelet_spectrum_csv(const HeadTensors& head, const DwtDepth& depth);
/// Y(1..10) and Y(N-9..N); every t when N < 20.
std::string bridge_endpoints_csv(const HeadTensors& head);
std::string fidelity_curves_csv(const HeadTensors& head, const std::vector<Index>& ranks);
/// Per model: head count, median and interquartile range of mu_K.
std::string mu_k_vs_size_csv(const Manifest& manifest);

/// Linear-interpolation quantile (q in [0, 1]) of unsorted data.
double quantile(std::vector<double> values, double q);

} // namespace efield
