#include "efield/analysis.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <fmt/format.h>
#include <json.hpp>

#include "efield/energy.hpp"
#include "efield/fidelity.hpp"
#include "efield/geometry.hpp"
#include "efield/numeric.hpp"
#include "efield/spectral.hpp"

namespace efield {

using json = nlohmann::json;

void RunConfig::validate() const {
    if (tau_max < 1)
        throw std::invalid_argument("tau_max must be at least 1");
    if (dwt_depth.mode == DwtDepth::Mode::Fixed && dwt_depth.levels < 1)
        throw std::invalid_argument(fmt::format("dwt_depth must be >= 1, got {}", dwt_depth.levels));
    if (fidelity_rs.empty())
        throw std::invalid_argument("fidelity_rs must not be empty");
    for (Index r : fidelity_rs)
        if (r < 1)
            throw std::invalid_argument(fmt::format("fidelity rank must be >= 1, got {}", r));
    if (!std::isfinite(mu_k_threshold) || mu_k_threshold < 1.0)
        throw std::invalid_argument(fmt::format("mu_k_threshold must be finite and >= 1, got {}", mu_k_threshold));
    if (workers < 1)
        throw std::invalid_argument("workers must be >= 1");
    if (!write_json && !write_csv)
        throw std::invalid_argument("at least one output format is required");
}

void parse_formats(const std::string& list, RunConfig& config) {
    config.write_json = false;
    config.write_csv = false;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item == "json")
            config.write_json = true;
        else if (item == "csv")
            config.write_csv = true;
        else
            throw std::invalid_argument(fmt::format("unknown format '{}' (expected json or csv)", item));
    }
}

namespace {

void add_check(HeadReport& r, std::string name, double measured, double tolerance, bool mechanism = true,
               std::string note = {}) {
    CheckResult c;
    c.name = std::move(name);
    c.measured = measured;
    c.tolerance = tolerance;
    c.status = measured <= tolerance ? CheckStatus::Pass : CheckStatus::Fail;
    c.mechanism_level = mechanism;
    c.note = std::move(note);
    r.checks.push_back(std::move(c));
}

void skip_check(HeadReport& r, std::string name, std::string reason, bool mechanism = true) {
    CheckResult c;
    c.name = std::move(name);
    c.status = CheckStatus::Skipped;
    c.mechanism_level = mechanism;
    c.note = std::move(reason);
    r.checks.push_back(std::move(c));
}

void skip_fields(HeadReport& r, std::initializer_list<const char*> fields, const std::string& reason) {
    for (const char* f : fields)
        r.skipped[f] = reason;
}

double max_offdiag_and_diag(const Eigen::MatrixXd& m, double& diag) {
    const Eigen::MatrixXd g = m.transpose() * m;
    double off = 0.0;
    diag = 0.0;
    for (Index a = 0; a < g.rows(); ++a)
        for (Index b = 0; b < g.cols(); ++b) {
            if (a == b)
                diag = std::max(diag, std::abs(g(a, b) - 1.0));
            else
                off = std::max(off, std::abs(g(a, b)));
        }
    return off;
}

double max_row_spread(const Eigen::MatrixXd& z) {
    double spread = 0.0;
    for (Index i = 0; i < z.rows(); ++i)
        spread = std::max(spread, z.row(i).maxCoeff() - z.row(i).minCoeff());
    return spread;
}

void analyze_channels(HeadReport& r, const HeadTensors& head, const CausalEnergyField& e,
                      const RowCenteredLogit& et, const ChannelDecomposition& dec) {
    const Index dim = head.head_dim();
    r.rank = dec.numerical_rank;
    add_check(r, "rank_bound", static_cast<double>(dec.numerical_rank), static_cast<double>(dim + 1));
    const Index tail = dim + 1;  // 0-based index of sigma_{d_h + 2}
    if (dec.full_spectrum.size() > tail && dec.full_spectrum(0) > 0.0)
        add_check(r, "rank_tail", dec.full_spectrum(tail) / dec.full_spectrum(0), 1e-9);
    else
        skip_check(r, "rank_tail", "sigma_{d_h+2} undefined");

    double diag_u = 0.0;
    double diag_v = 0.0;
    const double off_u = max_offdiag_and_diag(dec.query_profiles, diag_u);
    const double off_v = max_offdiag_and_diag(dec.key_profiles, diag_v);
    add_check(r, "profile_unit_norm", std::max(diag_u, diag_v), 1e-10);
    add_check(r, "profile_orthogonality", std::max(off_u, off_v), 1e-8);
    add_check(r, "svd_reconstruction", reconstruction_error(dec, et), 1e-8);
    add_check(r, "causal_reconstruction", causal_reconstruction_error(dec, e, et), 1e-8);
}

void analyze_geometry(HeadReport& r, const HeadTensors& head, const ChannelDecomposition& dec,
                      double threshold) {
    KeyGeometry g;
    try {
        g = key_incoherence(head.k);
    } catch (const AnalysisError& ex) {
        skip_fields(r, {"mu_K", "kappa", "scale_ratio", "ipr_stats", "bound", "centered_bound"}, ex.what());
        skip_check(r, "delocalization_bound", ex.what(), false);
        skip_check(r, "centered_delocalization", ex.what(), false);
        r.flags.push_back(ex.what());
        return;
    }
    r.mu_k = g.mu_k;
    r.kappa = g.kappa;
    r.scale_ratio = g.scale_ratio;
    if (g.mu_k > threshold)
        r.flags.push_back(fmt::format("mu_K {:.6g} above threshold {:.6g}", g.mu_k, threshold));

    const DelocalizationReport d = delocalization_check(head, dec);
    r.bound = d.bound;
    if (d.rank_deficient_keys)
        r.flags.push_back("rank-deficient K");
    if (d.centered_bound > 0.0)
        r.centered_bound = d.centered_bound;
    else
        r.skipped["centered_bound"] = "centered keys are zero";

    if (dec.numerical_rank == 0) {
        r.skipped["ipr_stats"] = "Etilde is zero";
        skip_check(r, "delocalization_bound", "no singular vectors", false);
        skip_check(r, "centered_delocalization", "no singular vectors", false);
        return;
    }
    r.ipr = IprStats{d.ipr_times_length, d.mean_ipr_times_length, d.weighted_mean_ipr_times_length};
    const double worst = *std::max_element(d.ipr_times_length.begin(), d.ipr_times_length.end());
    if (d.rank_deficient_keys) {
        skip_check(r, "delocalization_bound", "rank-deficient K: bound is infinite", false);
    } else {
        add_check(r, "delocalization_bound", worst, d.bound, false,
                  fmt::format("{} of {} vectors above the bound", d.violations, d.ipr_times_length.size()));
        if (d.violations > 0)
            r.flags.push_back(fmt::format("delocalization bound exceeded by {} vectors", d.violations));
    }
    if (d.centered_bound > 0.0)
        add_check(r, "centered_delocalization", worst, d.centered_bound * (1.0 + 1e-9), false,
                  fmt::format("{} vectors above the centered-key bound", d.centered_violations));
    else
        skip_check(r, "centered_delocalization", "centered keys are zero", false);
}

constexpr std::initializer_list<const char*> kFlattenFields = {
    "bridge_ratio", "global_sum_ratio", "e_vs_etilde_gap", "rho", "dwt_levels", "wavelet_density"};
constexpr std::initializer_list<const char*> kFlattenChecks = {
    "flatten", "bridge_ratio", "global_sum_ratio", "bridge_endpoint", "channel_sum", "parseval", "dc_fraction"};

void analyze_signal(HeadReport& r, const CausalEnergyField& e, const RowCenteredLogit& et,
                    const ChannelDecomposition& dec, const RunConfig& config) {
    const Index length = e.length();
    if (length < 2) {
        const std::string reason = "empty flattened signal (L = 1)";
        skip_fields(r, kFlattenFields, reason);
        for (const char* c : kFlattenChecks)
            skip_check(r, c, reason);
        return;
    }
    const FlattenedSignal sig = flatten(e);
    const std::size_t n = sig.size();
    add_check(r, "flatten", std::abs(pairwise_sum(sig.values)) / (1.0 + max_abs(sig.values)), 1e-9);

    const AutocovarianceReport bridge = bridge_check(e, std::min(config.tau_max, n - 1));
    r.bridge_ratio = bridge.bridge_ratio;
    r.global_sum_ratio = bridge.global_sum_ratio;
    if (bridge.degenerate)
        r.flags.push_back("degenerate all-zero field");
    add_check(r, "bridge_ratio", std::abs(bridge.bridge_ratio - 1.0), 1e-6);
    add_check(r, "global_sum_ratio", std::abs(bridge.global_sum_ratio - 1.0), 1e-6);

    const auto y = cumulative_bridge(sig);
    double abs_total = 0.0;
    for (double v : sig.values)
        abs_total += std::abs(v);
    add_check(r, "bridge_endpoint", std::abs(y.back()) / (1.0 + abs_total), 1e-9);

    // Channel sum on the causal flattening of Etilde, and its gap to E.
    std::set<std::size_t> lag_set{0, 1, static_cast<std::size_t>(length), n / 2};
    std::vector<std::size_t> lags;
    for (std::size_t t : lag_set)
        if (t < n)
            lags.push_back(t);
    const FlattenedSignal sig_t = flatten_causal(et.etilde);
    const auto gamma_t = autocovariance(sig_t.values, lags.back());
    const auto gamma_e = autocovariance(sig.values, lags.back());
    if (gamma_e[0] > 0.0) {
        double gap = 0.0;
        for (std::size_t t : lags)
            gap = std::max(gap, std::abs(gamma_e[t] - gamma_t[t]) / gamma_e[0]);
        r.e_vs_etilde_gap = gap;
    } else {
        r.skipped["e_vs_etilde_gap"] = "zero energy field";
    }
    if (dec.numerical_rank > 0 && gamma_t[0] > 0.0) {
        const auto sums = channel_covariance_sum(dec, sig_t.index_map, lags);
        double worst = 0.0;
        for (std::size_t a = 0; a < lags.size(); ++a)
            worst = std::max(worst, std::abs(sums[a] - gamma_t[lags[a]]) / gamma_t[0]);
        add_check(r, "channel_sum", worst, 1e-8);
    } else {
        skip_check(r, "channel_sum", "Etilde has no channels on the causal cells");
    }

    if (n < 8) {
        const std::string reason = fmt::format("signal length {} below the 8-tap filter", n);
        skip_fields(r, {"rho", "dwt_levels", "wavelet_density"}, reason);
        skip_check(r, "parseval", reason);
        skip_check(r, "dc_fraction", reason);
        return;
    }
    try {
        const WaveletReport w = dwt(sig.values, config.dwt_depth);
        const WaveletReport full = dwt(sig.values, DwtDepth::full());
        r.rho = w.rho;
        r.dwt_levels = w.levels;
        r.wavelet_density = w.density;
        add_check(r, "parseval", std::max(w.parseval_residual, full.parseval_residual), 1e-10);
        add_check(r, "dc_fraction", full.total_energy > 0.0 ? full.approx_energy / full.total_energy : 0.0, 1e-12);
    } catch (const AnalysisError& ex) {
        skip_fields(r, {"rho", "dwt_levels", "wavelet_density"}, ex.what());
        skip_check(r, "parseval", ex.what());
        skip_check(r, "dc_fraction", ex.what());
    }
}

void analyze_fidelity(HeadReport& r, const HeadTensors& head, const RunConfig& config) {
    std::vector<Index> ranks;
    for (Index rank : config.fidelity_rs)
        if (rank <= head.length())
            ranks.push_back(rank);
        else
            r.flags.push_back(fmt::format("fidelity rank {} exceeds L = {}", rank, head.length()));
    if (ranks.empty()) {
        r.skipped["fidelity"] = "every requested rank exceeds L";
        skip_check(r, "fidelity_monotone", "no fidelity ranks", false);
        return;
    }
    std::vector<FidelityCurve> curves;
    try {
        curves = fidelity_table(head, ranks);
    } catch (const AnalysisError& ex) {
        r.skipped["fidelity"] = ex.what();
        skip_check(r, "fidelity_monotone", ex.what(), false);
        return;
    }

    // Monotone in r for svd_etilde (Eckart-Young) and top-k (nested supports);
    // the causal-domain svd_e curve carries no such guarantee.
    double worst_drop = 0.0;
    for (const auto& c : curves) {
        if (c.method == FidelityMethod::SvdE)
            continue;
        auto pts = c.points;
        std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.rank < b.rank; });
        for (std::size_t a = 1; a < pts.size(); ++a)
            worst_drop = std::max(worst_drop, pts[a - 1].value - pts[a].value);
    }
    add_check(r, "fidelity_monotone", worst_drop, 1e-12, false);

    const auto& svd = curves[0].points;
    const auto& topk = curves[2].points;
    for (std::size_t a = 0; a < svd.size(); ++a)
        if (topk[a].value > svd[a].value)
            r.flags.push_back(fmt::format("top-k above svd_etilde at r = {}", svd[a].rank));
    r.fidelity = std::move(curves);
}

} // namespace

HeadReport analyze_head(const HeadTensors& head, const RunConfig& config, FaultInjection fault) {
    HeadReport r;
    r.model_id = head.meta.model_id;
    r.text_id = head.meta.text_id;
    r.layer = head.meta.layer;
    r.query_head = head.meta.query_head;
    r.kv_head = head.meta.kv_head;
    r.length = head.length();
    r.head_dim = head.head_dim();
    r.softmax_scale = head.softmax_scale;

    const LogitMatrix z = logits(head);
    CausalEnergyField e = causal_energy(z);
    if (fault.rowsum_bug)
        for (Index i = 1; i < e.length(); ++i)
            e.row(i)[0] += 1e-6 * (1.0 + e.row_max_abs_logit[i]);
    const RowCenteredLogit et = row_centered(z);

    add_check(r, "row_sum_causal", row_sum_violation(e), 1e-9);
    add_check(r, "row_sum_full", row_sum_violation(et), 1e-9);
    add_check(r, "causal_offset", causal_offset_spread(e, et), 1e-12);
    if (r.length >= 2) {
        r.diag_mean = mean_diagonal_energy(e);
        r.sink_mean = mean_sink_energy(e);
    } else {
        skip_fields(r, {"diag_mean", "sink_mean"}, "L = 1 has no rows beyond the first");
    }

    const ChannelDecomposition dec = channel_decomposition(et, r.head_dim);
    analyze_channels(r, head, e, et, dec);
    analyze_geometry(r, head, dec, config.mu_k_threshold);
    analyze_signal(r, e, et, dec, config);

    if (const double spread = max_row_spread(z.z); spread > kClrMaxRowSpread) {
        const std::string reason = fmt::format("row spread {:.6g} above {}", spread, kClrMaxRowSpread);
        skip_check(r, "clr", reason);
        skip_check(r, "causal_clr", reason);
    } else {
        try {
            add_check(r, "clr", clr_residual(z), 1e-9);
        } catch (const AnalysisError& ex) {
            skip_check(r, "clr", ex.what());
        }
        try {
            add_check(r, "causal_clr", causal_clr_residual(e), 1e-9);
        } catch (const AnalysisError& ex) {
            skip_check(r, "causal_clr", ex.what());
        }
    }

    analyze_fidelity(r, head, config);
    return r;
}

// ---- batch ----

void parallel_for(std::size_t n, unsigned workers, const std::function<void(std::size_t)>& fn) {
    const std::size_t threads = std::min<std::size_t>(std::max(1u, workers), n);
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i)
            fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++)
                fn(i);
        });
}

int exit_code_for(const std::vector<HeadOutcome>& outcomes) {
    bool failed = false;
    bool errored = false;
    for (const auto& o : outcomes) {
        if (o.report && !o.report->mechanism_ok())
            failed = true;
        if (!o.report)
            errored = true;
    }
    return failed ? 2 : errored ? 1 : 0;
}

namespace {

void mean_std(const std::vector<double>& v, double& mean, double& sd) {
    mean = sd = 0.0;
    if (v.empty())
        return;
    mean = pairwise_sum(v) / static_cast<double>(v.size());
    std::vector<double> dev(v.size());
    for (std::size_t a = 0; a < v.size(); ++a)
        dev[a] = v[a] - mean;
    sd = std::sqrt(pairwise_sum_sq(dev) / static_cast<double>(v.size()));
}

ModelAggregate aggregate_group(const std::string& id, const std::vector<const HeadReport*>& reports,
                               double threshold) {
    ModelAggregate m;
    m.model_id = id;
    m.heads = reports.size();
    std::vector<double> mu;
    std::vector<double> ipr;
    std::vector<double> ipr_w;
    std::map<std::string, std::map<Index, std::vector<double>>> fid;
    std::size_t within = 0;
    for (const HeadReport* r : reports) {
        if (!r->mechanism_ok())
            ++m.mechanism_failures;
        if (r->mu_k) {
            mu.push_back(*r->mu_k);
            if (*r->mu_k <= threshold)
                ++within;
        }
        if (r->ipr) {
            ipr.push_back(r->ipr->mean);
            ipr_w.push_back(r->ipr->weighted_mean);
        }
        if (r->fidelity)
            for (const auto& c : *r->fidelity)
                for (const auto& p : c.points)
                    fid[to_string(c.method)][p.rank].push_back(p.value);
    }
    m.mu_k_count = mu.size();
    mean_std(mu, m.mu_k_mean, m.mu_k_std);
    m.pct_mu_k_within = mu.empty() ? 0.0 : 100.0 * static_cast<double>(within) / static_cast<double>(mu.size());
    m.ipr_count = ipr.size();
    double sd = 0.0;
    mean_std(ipr, m.ipr_l_mean, sd);
    m.ipr_l_cv = m.ipr_l_mean > 0.0 ? 100.0 * sd / m.ipr_l_mean : 0.0;
    mean_std(ipr_w, m.ipr_l_weighted_mean, sd);
    for (const auto& [method, by_rank] : fid)
        for (const auto& [rank, values] : by_rank)
            m.fidelity_mean[method][rank] = pairwise_sum(values) / static_cast<double>(values.size());
    return m;
}

json model_json(const ModelAggregate& m) {
    json fid = json::object();
    for (const auto& [method, by_rank] : m.fidelity_mean) {
        json row = json::object();
        for (const auto& [rank, value] : by_rank)
            row[std::to_string(rank)] = value;
        fid[method] = row;
    }
    return {{"model_id", m.model_id},
            {"heads", m.heads},
            {"mu_K", {{"count", m.mu_k_count},
                      {"mean", m.mu_k_mean},
                      {"std", m.mu_k_std},
                      {"pct_within_threshold", m.pct_mu_k_within}}},
            {"ipr_times_L", {{"count", m.ipr_count},
                             {"mean", m.ipr_l_mean},
                             {"cv_pct", m.ipr_l_cv},
                             {"sigma2_weighted_mean", m.ipr_l_weighted_mean}}},
            {"fidelity_mean", fid},
            {"mechanism_failures", m.mechanism_failures}};
}

} // namespace

AggregateReport aggregate_reports(const std::vector<const HeadReport*>& reports, double mu_k_threshold) {
    AggregateReport agg;
    agg.mu_k_threshold = mu_k_threshold;
    std::map<std::string, std::vector<const HeadReport*>> groups;
    for (const HeadReport* r : reports)
        groups[r->model_id].push_back(r);
    for (const auto& [id, members] : groups)
        agg.models.push_back(aggregate_group(id, members, mu_k_threshold));
    agg.overall = aggregate_group("all", reports, mu_k_threshold);
    return agg;
}

std::string aggregate_to_json(const AggregateReport& agg, const std::vector<HeadOutcome>& outcomes) {
    json doc;
    doc["mu_k_threshold"] = agg.mu_k_threshold;
    json models = json::array();
    for (const auto& m : agg.models)
        models.push_back(model_json(m));
    doc["models"] = models;
    doc["overall"] = model_json(agg.overall);
    json errors = json::array();
    for (const auto& o : outcomes)
        if (!o.report)
            errors.push_back({{"index", o.index},
                              {"dump_path", o.entry.dump_path},
                              {"kind", o.io_error ? "io" : "analysis"},
                              {"error", o.error}});
    doc["errors"] = errors;
    return doc.dump(2);
}

AnalyzeResult run_analyze(const Manifest& manifest, const RunConfig& config, FaultInjection fault) {
    config.validate();
    AnalyzeResult result;
    result.outcomes.resize(manifest.heads.size());
    parallel_for(manifest.heads.size(), config.workers, [&](std::size_t i) {
        HeadOutcome& o = result.outcomes[i];
        o.index = i;
        o.entry = manifest.heads[i];
        try {
            const HeadTensors head = read_head_dump(manifest, o.entry);
            o.report = analyze_head(head, config, fault);
        } catch (const IoError& ex) {
            o.error = ex.what();
            o.io_error = true;
        } catch (const std::exception& ex) {
            o.error = ex.what();
        }
    });
    std::vector<const HeadReport*> reports;
    for (const auto& o : result.outcomes)
        if (o.report)
            reports.push_back(&*o.report);
    result.aggregate = aggregate_reports(reports, config.mu_k_threshold);
    result.aggregate.errors = result.outcomes.size() - reports.size();
    result.exit_code = exit_code_for(result.outcomes);
    return result;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out)
        throw IoError(fmt::format("cannot write {}", path.string()));
}

std::string aggregate_csv(const AggregateReport& agg) {
    std::string out = "model_id,heads,mu_K_mean,mu_K_std,pct_mu_K_within,ipr_L_mean,ipr_L_cv_pct,"
                      "ipr_L_weighted_mean,mechanism_failures\n";
    auto row = [&](const ModelAggregate& m) {
        out += fmt::format("{},{},{},{},{},{},{},{},{}\n", m.model_id, m.heads, format_real(m.mu_k_mean),
                           format_real(m.mu_k_std), format_real(m.pct_mu_k_within), format_real(m.ipr_l_mean),
                           format_real(m.ipr_l_cv), format_real(m.ipr_l_weighted_mean), m.mechanism_failures);
    };
    for (const auto& m : agg.models)
        row(m);
    row(agg.overall);
    return out;
}

} // namespace

void write_analysis(const AnalyzeResult& result, const RunConfig& config) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(config.output_dir, ec);
    if (ec)
        throw IoError(fmt::format("cannot create {}: {}", config.output_dir.string(), ec.message()));
    if (config.write_json) {
        const fs::path heads = config.output_dir / "heads";
        fs::create_directories(heads, ec);
        if (ec)
            throw IoError(fmt::format("cannot create {}: {}", heads.string(), ec.message()));
        for (const auto& o : result.outcomes)
            if (o.report)
                write_text(heads / fmt::format("head_{:05}.json", o.index), head_report_to_json(*o.report) + "\n");
        write_text(config.output_dir / "aggregate.json", aggregate_to_json(result.aggregate, result.outcomes) + "\n");
    }
    if (config.write_csv) {
        std::string csv = head_csv_header();
        for (const auto& o : result.outcomes)
            if (o.report)
                csv += head_csv_row(o.index, *o.report);
        write_text(config.output_dir / "heads.csv", csv);
        write_text(config.output_dir / "aggregate.csv", aggregate_csv(result.aggregate));
    }
}

// ---- verify ----

bool VerifySummary::all_pass() const {
    if (errors > 0)
        return false;
    for (const auto& c : checks)
        if (c.fail > 0)
            return false;
    return true;
}

VerifySummary run_verify(std::size_t count, const std::function<HeadTensors(std::size_t)>& source,
                         const RunConfig& config, FaultInjection fault) {
    config.validate();
    std::vector<std::optional<HeadReport>> reports(count);
    std::vector<std::string> errors(count);
    parallel_for(count, config.workers, [&](std::size_t i) {
        try {
            reports[i] = analyze_head(source(i), config, fault);
        } catch (const std::exception& ex) {
            errors[i] = ex.what();
        }
    });

    VerifySummary s;
    s.heads = count;
    std::map<std::string, std::size_t> slot;
    for (std::size_t i = 0; i < count; ++i) {
        if (!reports[i]) {
            ++s.errors;
            s.error_messages.push_back(fmt::format("head {}: {}", i, errors[i]));
            continue;
        }
        for (const auto& c : reports[i]->checks) {
            auto [it, inserted] = slot.try_emplace(c.name, s.checks.size());
            if (inserted)
                s.checks.push_back({c.name});
            CheckTally& t = s.checks[it->second];
            switch (c.status) {
            case CheckStatus::Pass: ++t.pass; break;
            case CheckStatus::Fail: ++t.fail; break;
            case CheckStatus::Skipped: ++t.skipped; break;
            }
        }
    }
    return s;
}

VerifySummary run_verify(const Manifest& manifest, const RunConfig& config, FaultInjection fault) {
    return run_verify(
        manifest.heads.size(), [&](std::size_t i) { return read_head_dump(manifest, manifest.heads[i]); }, config,
        fault);
}

VerifySummary run_verify(const SynthSpec& spec, std::size_t count, const RunConfig& config, FaultInjection fault) {
    return run_verify(
        count,
        [&](std::size_t i) {
            SynthSpec s = spec;
            s.seed = spec.seed + i;
            return generate(s);
        },
        config, fault);
}

std::string format_verify_summary(const VerifySummary& s) {
    std::string out = fmt::format("{:<26} {:>8} {:>8} {:>8}\n", "check", "pass", "fail", "skipped");
    for (const auto& c : s.checks)
        out += fmt::format("{:<26} {:>8} {:>8} {:>8}\n", c.name, c.pass, c.fail, c.skipped);
    for (const auto& e : s.error_messages)
        out += fmt::format("error: {}\n", e);
    out += fmt::format("heads: {}, errors: {}\n", s.heads, s.errors);
    out += s.all_pass() ? "RESULT: PASS\n" : "RESULT: FAIL\n";
    return out;
}

// ---- synthetic batches ----

Manifest write_synth_batch(const SynthSpec& spec, std::size_t count, const std::filesystem::path& out_dir,
                           DType dtype) {
    if (count == 0)
        throw std::invalid_argument("synth count must be at least 1");
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec)
        throw IoError(fmt::format("cannot create {}: {}", out_dir.string(), ec.message()));
    Manifest m;
    m.text_id = "synthetic";
    m.base_dir = out_dir;
    for (std::size_t i = 0; i < count; ++i) {
        SynthSpec s = spec;
        s.seed = spec.seed + i;
        HeadTensors head = generate(s);
        head.meta.query_head = static_cast<std::uint32_t>(i);
        head.meta.kv_head = static_cast<std::uint32_t>(i);
        head.meta.text_id = m.text_id;
        ManifestHead entry;
        entry.dump_path = fmt::format("{}_L{}_d{}_s{}.eft", to_string(s.kind), s.length, s.head_dim, s.seed);
        entry.model_id = head.meta.model_id;
        entry.layer = 0;
        entry.query_head = head.meta.query_head;
        entry.kv_head = head.meta.kv_head;
        entry.length = static_cast<std::uint64_t>(s.length);
        entry.head_dim = static_cast<std::uint64_t>(s.head_dim);
        entry.dtype = dtype;
        write_head_dump(head, out_dir / entry.dump_path, dtype);
        m.heads.push_back(entry);
        m.gqa_map[0][entry.query_head] = entry.kv_head;
    }
    save_manifest(m, out_dir / "manifest.json");
    return m;
}

// ---- figure data ----

std::string field_contour_csv(const HeadTensors& head) {
    const CausalEnergyField e = causal_energy(logits(head));
    std::string out = "i,j,E\n";
    for (Index i = 0; i < e.length(); ++i) {
        const auto row = e.row(i);
        for (Index j = 0; j <= i; ++j)
            out += fmt::format("{},{},{}\n", i, j, format_real(row[j]));
    }
    return out;
}

std::string wavelet_spectrum_csv(const HeadTensors& head, const DwtDepth& depth) {
    const FlattenedSignal sig = flatten(causal_energy(logits(head)));
    const WaveletReport w = dwt(sig.values, depth);
    std::string out = "kind,level,count,value\n";
    for (std::size_t j = 0; j < w.density.size(); ++j)
        out += fmt::format("detail,{},{},{}\n", j + 1, w.detail_count[j], format_real(w.density[j]));
    out += fmt::format("rho,{},{},{}\n", w.levels, w.padded_length >> w.levels, format_real(w.rho));
    return out;
}

std::string bridge_endpoints_csv(const HeadTensors& head) {
    const FlattenedSignal sig = flatten(causal_energy(logits(head)));
    const auto y = cumulative_bridge(sig);
    const std::size_t n = sig.size();
    std::string out = "t,Y\n";
    for (std::size_t t = 1; t <= n; ++t)
        if (t <= 10 || t + 10 > n)
            out += fmt::format("{},{}\n", t, format_real(y[t]));
    return out;
}

std::string fidelity_curves_csv(const HeadTensors& head, const std::vector<Index>& ranks) {
    std::string out = "method,r,F\n";
    for (const auto& c : fidelity_table(head, ranks))
        for (const auto& p : c.points)
            out += fmt::format("{},{},{}\n", to_string(c.method), p.rank, format_real(p.value));
    return out;
}

double quantile(std::vector<double> values, double q) {
    if (values.empty())
        throw std::invalid_argument("quantile of an empty set");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

std::string mu_k_vs_size_csv(const Manifest& manifest) {
    std::map<std::string, std::vector<double>> groups;
    for (const auto& h : manifest.heads)
        groups[h.model_id].push_back(key_incoherence(read_head_dump(manifest, h).k).mu_k);
    std::string out = "model_id,heads,median,q1,q3,iqr\n";
    for (const auto& [id, values] : groups) {
        const double q1 = quantile(values, 0.25);
        const double q3 = quantile(values, 0.75);
        out += fmt::format("{},{},{},{},{},{}\n", id, values.size(), format_real(quantile(values, 0.5)),
                           format_real(q1), format_real(q3), format_real(q3 - q1));
    }
    return out;
}

} // namespace efield
