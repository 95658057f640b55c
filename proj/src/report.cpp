#include "efield/report.hpp"

#include <cmath>
#include <limits>

#include <fmt/format.h>
#include <json.hpp>

namespace efield {

using json = nlohmann::json;

std::string to_string(CheckStatus status) {
    switch (status) {
    case CheckStatus::Pass: return "pass";
    case CheckStatus::Fail: return "fail";
    case CheckStatus::Skipped: return "skipped";
    }
    return "skipped";
}

namespace {

CheckStatus parse_status(const std::string& s) {
    if (s == "pass")
        return CheckStatus::Pass;
    if (s == "fail")
        return CheckStatus::Fail;
    if (s == "skipped")
        return CheckStatus::Skipped;
    throw IoError(fmt::format("report: unknown check status '{}'", s));
}

FidelityMethod parse_method(const std::string& s) {
    for (auto m : {FidelityMethod::SvdEtilde, FidelityMethod::SvdE, FidelityMethod::TopK})
        if (to_string(m) == s)
            return m;
    throw IoError(fmt::format("report: unknown fidelity method '{}'", s));
}

// JSON has no infinities; they travel as strings.
json real(double v) {
    if (std::isfinite(v))
        return v;
    return format_real(v);
}

double real_from(const json& j) {
    if (j.is_number())
        return j.get<double>();
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "inf")
            return std::numeric_limits<double>::infinity();
        if (s == "-inf")
            return -std::numeric_limits<double>::infinity();
        if (s == "nan")
            return std::numeric_limits<double>::quiet_NaN();
    }
    throw IoError(fmt::format("report: expected a number, got {}", j.dump()));
}

json reals(const std::vector<double>& v) {
    json a = json::array();
    for (double x : v)
        a.push_back(real(x));
    return a;
}

std::vector<double> reals_from(const json& j) {
    std::vector<double> out;
    for (const auto& x : j)
        out.push_back(real_from(x));
    return out;
}

template <typename T>
void put(json& doc, const char* key, const std::optional<T>& v) {
    if (!v)
        doc[key] = nullptr;
    else if constexpr (std::is_same_v<T, double>)
        doc[key] = real(*v);
    else
        doc[key] = *v;
}

template <typename T>
void get(const json& doc, const char* key, std::optional<T>& out) {
    if (!doc.contains(key) || doc.at(key).is_null())
        return;
    if constexpr (std::is_same_v<T, double>)
        out = real_from(doc.at(key));
    else
        out = doc.at(key).get<T>();
}

} // namespace

std::string format_real(double value) {
    if (std::isnan(value))
        return "nan";
    if (std::isinf(value))
        return value > 0 ? "inf" : "-inf";
    return fmt::format("{:.17g}", value);
}

bool HeadReport::mechanism_ok() const {
    for (const auto& c : checks)
        if (c.mechanism_level && c.status == CheckStatus::Fail)
            return false;
    return true;
}

const CheckResult* HeadReport::find_check(const std::string& name) const {
    for (const auto& c : checks)
        if (c.name == name)
            return &c;
    return nullptr;
}

std::string head_report_to_json(const HeadReport& r, int indent) {
    json doc;
    doc["identity"] = {{"model_id", r.model_id},     {"text_id", r.text_id}, {"layer", r.layer},
                       {"query_head", r.query_head}, {"kv_head", r.kv_head}, {"L", r.length},
                       {"d_h", r.head_dim},          {"softmax_scale", real(r.softmax_scale)}};
    put(doc, "mu_K", r.mu_k);
    put(doc, "kappa", r.kappa);
    put(doc, "scale_ratio", r.scale_ratio);
    if (r.ipr)
        doc["ipr_stats"] = {{"per_vector", reals(r.ipr->per_vector)},
                            {"mean", real(r.ipr->mean)},
                            {"sigma2_weighted_mean", real(r.ipr->weighted_mean)}};
    else
        doc["ipr_stats"] = nullptr;
    put(doc, "bound", r.bound);
    put(doc, "centered_bound", r.centered_bound);
    put(doc, "bridge_ratio", r.bridge_ratio);
    put(doc, "global_sum_ratio", r.global_sum_ratio);
    put(doc, "e_vs_etilde_gap", r.e_vs_etilde_gap);
    put(doc, "rho", r.rho);
    put(doc, "dwt_levels", r.dwt_levels);
    if (r.wavelet_density)
        doc["wavelet_density"] = reals(*r.wavelet_density);
    else
        doc["wavelet_density"] = nullptr;
    if (r.fidelity) {
        json curves = json::array();
        for (const auto& c : *r.fidelity) {
            json points = json::array();
            for (const auto& p : c.points)
                points.push_back({{"r", p.rank}, {"F", real(p.value)}});
            curves.push_back({{"method", to_string(c.method)},
                              {"domain", c.domain == FidelityDomain::Full ? "full" : "causal"},
                              {"points", points}});
        }
        doc["fidelity"] = curves;
    } else {
        doc["fidelity"] = nullptr;
    }
    put(doc, "rank", r.rank);
    put(doc, "diag_mean", r.diag_mean);
    put(doc, "sink_mean", r.sink_mean);

    json checks = json::array();
    for (const auto& c : r.checks)
        checks.push_back({{"name", c.name},
                          {"status", to_string(c.status)},
                          {"measured", real(c.measured)},
                          {"tolerance", real(c.tolerance)},
                          {"mechanism_level", c.mechanism_level},
                          {"note", c.note}});
    doc["checks"] = checks;
    doc["flags"] = r.flags;
    doc["skipped"] = r.skipped;
    return doc.dump(indent);
}

HeadReport head_report_from_json(const std::string& text) {
    const json doc = json::parse(text, nullptr, false);
    if (doc.is_discarded() || !doc.is_object())
        throw IoError("report: not a JSON object");
    HeadReport r;
    try {
        const json& id = doc.at("identity");
        r.model_id = id.at("model_id").get<std::string>();
        r.text_id = id.at("text_id").get<std::string>();
        r.layer = id.at("layer").get<std::uint32_t>();
        r.query_head = id.at("query_head").get<std::uint32_t>();
        r.kv_head = id.at("kv_head").get<std::uint32_t>();
        r.length = id.at("L").get<Index>();
        r.head_dim = id.at("d_h").get<Index>();
        r.softmax_scale = real_from(id.at("softmax_scale"));

        get(doc, "mu_K", r.mu_k);
        get(doc, "kappa", r.kappa);
        get(doc, "scale_ratio", r.scale_ratio);
        if (doc.contains("ipr_stats") && !doc.at("ipr_stats").is_null()) {
            const json& s = doc.at("ipr_stats");
            r.ipr = IprStats{reals_from(s.at("per_vector")), real_from(s.at("mean")),
                             real_from(s.at("sigma2_weighted_mean"))};
        }
        get(doc, "bound", r.bound);
        get(doc, "centered_bound", r.centered_bound);
        get(doc, "bridge_ratio", r.bridge_ratio);
        get(doc, "global_sum_ratio", r.global_sum_ratio);
        get(doc, "e_vs_etilde_gap", r.e_vs_etilde_gap);
        get(doc, "rho", r.rho);
        get(doc, "dwt_levels", r.dwt_levels);
        if (doc.contains("wavelet_density") && !doc.at("wavelet_density").is_null())
            r.wavelet_density = reals_from(doc.at("wavelet_density"));
        if (doc.contains("fidelity") && !doc.at("fidelity").is_null()) {
            std::vector<FidelityCurve> curves;
            for (const auto& c : doc.at("fidelity")) {
                FidelityCurve curve;
                curve.method = parse_method(c.at("method").get<std::string>());
                curve.domain = c.at("domain").get<std::string>() == "full" ? FidelityDomain::Full
                                                                           : FidelityDomain::Causal;
                for (const auto& p : c.at("points"))
                    curve.points.push_back({p.at("r").get<Index>(), real_from(p.at("F"))});
                curves.push_back(std::move(curve));
            }
            r.fidelity = std::move(curves);
        }
        get(doc, "rank", r.rank);
        get(doc, "diag_mean", r.diag_mean);
        get(doc, "sink_mean", r.sink_mean);
        for (const auto& c : doc.at("checks")) {
            CheckResult cr;
            cr.name = c.at("name").get<std::string>();
            cr.status = parse_status(c.at("status").get<std::string>());
            cr.measured = real_from(c.at("measured"));
            cr.tolerance = real_from(c.at("tolerance"));
            cr.mechanism_level = c.at("mechanism_level").get<bool>();
            cr.note = c.at("note").get<std::string>();
            r.checks.push_back(std::move(cr));
        }
        r.flags = doc.at("flags").get<std::vector<std::string>>();
        r.skipped = doc.at("skipped").get<std::map<std::string, std::string>>();
    } catch (const json::exception& e) {
        throw IoError(fmt::format("report: {}", e.what()));
    }
    return r;
}

std::string head_csv_header() {
    return "index,model_id,layer,query_head,kv_head,L,d_h,mu_K,kappa,ipr_mean,ipr_weighted_mean,bound,"
           "bridge_ratio,global_sum_ratio,rho,dwt_levels,rank,diag_mean,sink_mean,mechanism_ok\n";
}

std::string head_csv_row(std::size_t index, const HeadReport& r) {
    auto opt = [](const auto& v) -> std::string {
        if (!v)
            return "";
        if constexpr (std::is_floating_point_v<std::decay_t<decltype(*v)>>)
            return format_real(*v);
        else
            return std::to_string(*v);
    };
    return fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n", index, r.model_id, r.layer,
                       r.query_head, r.kv_head, r.length, r.head_dim, opt(r.mu_k), opt(r.kappa),
                       r.ipr ? format_real(r.ipr->mean) : "", r.ipr ? format_real(r.ipr->weighted_mean) : "",
                       opt(r.bound), opt(r.bridge_ratio), opt(r.global_sum_ratio), opt(r.rho), opt(r.dwt_levels),
                       opt(r.rank), opt(r.diag_mean), opt(r.sink_mean), r.mechanism_ok() ? 1 : 0);
}

} // namespace efield
