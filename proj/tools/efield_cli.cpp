// efield: batch driver for causal energy-field diagnostics.
//
// Exit codes: 0 success, 1 I/O or schema error, 2 mechanism-level invariant failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "efield/analysis.hpp"
#include "efield/geometry.hpp"
#include "efield/synth.hpp"

namespace {

using namespace efield;

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError(fmt::format("cannot open {}", path));
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<Index> parse_ranks(const std::string& list) {
    std::vector<Index> out;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        long long v = 0;
        try {
            v = std::stoll(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != item.size())
            throw std::invalid_argument(fmt::format("bad fidelity rank '{}'", item));
        out.push_back(static_cast<Index>(v));
    }
    return out;
}

struct ConfigFlags {
    std::size_t tau_max = 4096;
    std::string dwt_depth = "auto";
    std::string fidelity_rs = "5,10,20";
    double mu_k_threshold = kDefaultMuKThreshold;
    unsigned workers = 1;
    std::string formats = "json,csv";
    std::string out;

    void add_to(CLI::App* cmd, bool with_output) {
        cmd->add_option("--tau-max", tau_max, "largest autocovariance lag")->capture_default_str();
        cmd->add_option("--dwt-depth", dwt_depth, "auto, full or a level count")->capture_default_str();
        cmd->add_option("--fidelity-rs", fidelity_rs, "comma-separated ranks")->capture_default_str();
        cmd->add_option("--mu-k-threshold", mu_k_threshold, "mu_K warning threshold")->capture_default_str();
        cmd->add_option("--workers", workers, "parallel heads")->envname("EFL_WORKERS")->capture_default_str();
        if (with_output) {
            cmd->add_option("--format", formats, "json,csv")->capture_default_str();
            cmd->add_option("--out", out, "output directory")->required();
        }
    }

    RunConfig build() const {
        RunConfig c;
        c.tau_max = tau_max;
        c.dwt_depth = DwtDepth::parse(dwt_depth);
        c.fidelity_rs = parse_ranks(fidelity_rs);
        c.mu_k_threshold = mu_k_threshold;
        c.workers = workers;
        c.output_dir = out;
        parse_formats(formats, c);
        c.validate();
        return c;
    }
};

struct SynthFlags {
    std::string spec_path;
    std::string kind = "gaussian";
    Index length = 64;
    Index head_dim = 8;
    std::uint64_t seed = 0;
    SynthParams params;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--spec", spec_path, "synth spec JSON (overrides the inline flags)");
        cmd->add_option("--kind", kind, "gaussian, sink, concentrated, rank_deficient, low_rank_noise")
            ->capture_default_str();
        cmd->add_option("-L,--length", length, "context length")->capture_default_str();
        cmd->add_option("--d-h", head_dim, "head dimension")->capture_default_str();
        cmd->add_option("--seed", seed, "first seed")->capture_default_str();
        cmd->add_option("--sink-strength", params.sink_strength);
        cmd->add_option("--concentration-factor", params.concentration_factor);
        cmd->add_option("--target-rank", params.target_rank);
        cmd->add_option("--noise-level", params.noise_level);
        cmd->add_option("--target-position", params.target_position);
    }

    SynthSpec build() const {
        if (!spec_path.empty())
            return synth_spec_from_json(slurp(spec_path));
        SynthSpec s;
        s.kind = parse_synth_kind(kind);
        s.length = length;
        s.head_dim = head_dim;
        s.seed = seed;
        s.params = params;
        return s;
    }
};

int cmd_analyze(const std::string& manifest_path, const ConfigFlags& flags, bool inject) {
    const RunConfig config = flags.build();
    const Manifest manifest = load_manifest(manifest_path);
    const AnalyzeResult result = run_analyze(manifest, config, {inject});
    write_analysis(result, config);
    std::size_t failed = 0;
    for (const auto& o : result.outcomes) {
        if (!o.report)
            std::cerr << fmt::format("head {} ({}): {}\n", o.index, o.entry.dump_path, o.error);
        else if (!o.report->mechanism_ok())
            ++failed;
    }
    std::cout << fmt::format("analyzed {} heads: {} reports, {} errors, {} with invariant failures -> {}\n",
                             result.outcomes.size(), result.outcomes.size() - result.aggregate.errors,
                             result.aggregate.errors, failed, config.output_dir.string());
    return result.exit_code;
}

int cmd_verify(const std::string& manifest_path, const SynthFlags& synth, std::size_t count,
               const ConfigFlags& flags, bool inject) {
    const RunConfig config = flags.build();
    VerifySummary s;
    if (!manifest_path.empty())
        s = run_verify(load_manifest(manifest_path), config, {inject});
    else
        s = run_verify(synth.build(), count, config, {inject});
    std::cout << format_verify_summary(s);
    if (s.all_pass())
        return 0;
    return s.errors > 0 && std::all_of(s.checks.begin(), s.checks.end(), [](const auto& c) { return c.fail == 0; })
               ? 1
               : 2;
}

int cmd_synth(const SynthFlags& synth, std::size_t count, const std::string& out, const std::string& dtype) {
    const Manifest m = write_synth_batch(synth.build(), count, out, parse_dtype(dtype));
    std::cout << fmt::format("wrote {} dumps and manifest.json to {}\n", m.heads.size(), out);
    return 0;
}

int cmd_monitor(const std::string& input, double threshold) {
    MonitorStats stats;
    if (input.empty() || input == "-") {
        stats = monitor_mu_k(std::cin, std::cout, std::cerr, threshold);
    } else {
        std::ifstream in(input);
        if (!in)
            throw IoError(fmt::format("cannot open {}", input));
        stats = monitor_mu_k(in, std::cout, std::cerr, threshold);
    }
    std::cout.flush();
    std::cerr << fmt::format("records: {}, alerts: {}, skipped: {}\n", stats.records, stats.alerts, stats.skipped);
    return 0;
}

int cmd_plotdata(const std::string& manifest_path, std::size_t head_index, const std::string& which,
                 const ConfigFlags& flags, const std::string& out) {
    const RunConfig config = flags.build();
    const Manifest manifest = load_manifest(manifest_path);
    std::string csv;
    if (which == "mu_k_vs_size") {
        csv = mu_k_vs_size_csv(manifest);
    } else {
        if (head_index >= manifest.heads.size())
            throw std::invalid_argument(
                fmt::format("head index {} out of range ({} heads)", head_index, manifest.heads.size()));
        const HeadTensors head = read_head_dump(manifest, manifest.heads[head_index]);
        if (which == "field_contour")
            csv = field_contour_csv(head);
        else if (which == "wavelet_spectrum")
            csv = wavelet_spectrum_csv(head, config.dwt_depth);
        else if (which == "bridge_endpoints")
            csv = bridge_endpoints_csv(head);
        else if (which == "fidelity_curves")
            csv = fidelity_curves_csv(head, config.fidelity_rs);
        else
            throw std::invalid_argument(fmt::format("unknown plot data '{}'", which));
    }
    if (out.empty() || out == "-") {
        std::cout << csv;
    } else {
        std::ofstream f(out, std::ios::binary | std::ios::trunc);
        f << csv;
        if (!f)
            throw IoError(fmt::format("cannot write {}", out));
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Causal energy-field diagnostics for attention heads"};
    app.require_subcommand(1);

    // analyze
    auto* analyze = app.add_subcommand("analyze", "analyze every head of a manifest");
    std::string manifest_path;
    ConfigFlags analyze_flags;
    bool inject = false;
    analyze->add_option("--manifest", manifest_path, "manifest.json")->required();
    analyze_flags.add_to(analyze, true);
    analyze->add_flag("--inject-rowsum-bug", inject)->group("");

    // verify
    auto* verify = app.add_subcommand("verify", "run the invariant suite over a manifest or synthetic fixtures");
    std::string verify_manifest;
    SynthFlags verify_synth;
    std::size_t verify_count = 1;
    ConfigFlags verify_flags;
    bool verify_inject = false;
    verify->add_option("--manifest", verify_manifest, "manifest.json");
    verify_synth.add_to(verify);
    verify->add_option("--count", verify_count, "number of fixtures (consecutive seeds)")->capture_default_str();
    verify_flags.add_to(verify, false);
    verify->add_flag("--inject-rowsum-bug", verify_inject)->group("");

    // synth
    auto* synth = app.add_subcommand("synth", "write synthetic dumps and a manifest");
    SynthFlags synth_flags;
    std::size_t synth_count = 1;
    std::string synth_out;
    std::string synth_dtype = "f64";
    synth_flags.add_to(synth);
    synth->add_option("--count", synth_count, "number of fixtures (consecutive seeds)")->capture_default_str();
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--dtype", synth_dtype, "f32 or f64")->capture_default_str();

    // monitor
    auto* monitor = app.add_subcommand("monitor", "stream NDJSON key-norm records and alert on high mu_K");
    std::string monitor_input;
    double monitor_threshold = kDefaultMuKThreshold;
    monitor->add_option("--input", monitor_input, "NDJSON file (default stdin)");
    monitor->add_option("--mu-k-threshold", monitor_threshold, "alert when mu_K exceeds this")
        ->capture_default_str();

    // plotdata
    auto* plot = app.add_subcommand("plotdata", "emit figure data as CSV");
    std::string plot_manifest;
    std::size_t plot_head = 0;
    std::string plot_which;
    std::string plot_out;
    ConfigFlags plot_flags;
    plot->add_option("--manifest", plot_manifest, "manifest.json")->required();
    plot->add_option("--head", plot_head, "head index in manifest order")->capture_default_str();
    plot->add_option("--which", plot_which, "figure data to emit")
        ->required()
        ->check(CLI::IsMember(
            {"field_contour", "wavelet_spectrum", "bridge_endpoints", "fidelity_curves", "mu_k_vs_size"}));
    plot->add_option("--out", plot_out, "CSV file (default stdout)");
    plot_flags.add_to(plot, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*analyze)
            return cmd_analyze(manifest_path, analyze_flags, inject);
        if (*verify)
            return cmd_verify(verify_manifest, verify_synth, verify_count, verify_flags, verify_inject);
        if (*synth)
            return cmd_synth(synth_flags, synth_count, synth_out, synth_dtype);
        if (*monitor)
            return cmd_monitor(monitor_input, monitor_threshold);
        if (*plot)
            return cmd_plotdata(plot_manifest, plot_head, plot_which, plot_flags, plot_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
