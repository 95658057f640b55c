#include "efield/synth.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>

#include <fmt/format.h>
#include <json.hpp>

#include "efield/energy.hpp"
#include "efield/geometry.hpp"
#include "efield/rng.hpp"

namespace efield {

using json = nlohmann::json;

std::string to_string(SynthKind kind) {
    switch (kind) {
    case SynthKind::Gaussian: return "gaussian";
    case SynthKind::Sink: return "sink";
    case SynthKind::Concentrated: return "concentrated";
    case SynthKind::RankDeficient: return "rank_deficient";
    case SynthKind::LowRankNoise: return "low_rank_noise";
    }
    return "gaussian";
}

SynthKind parse_synth_kind(const std::string& s) {
    for (auto k : {SynthKind::Gaussian, SynthKind::Sink, SynthKind::Concentrated, SynthKind::RankDeficient,
                   SynthKind::LowRankNoise})
        if (to_string(k) == s)
            return k;
    throw std::invalid_argument(fmt::format("unknown synth kind '{}'", s));
}

namespace {

void check_shape(const SynthSpec& spec) {
    if (spec.length < 1 || spec.head_dim < 1)
        throw std::invalid_argument(fmt::format("synth shape must be positive, got {}x{}", spec.length,
                                                spec.head_dim));
}

Eigen::MatrixXd normal_matrix(CounterRng& rng, Index rows, Index cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j)
            m(i, j) = rng.next_normal();
    return m;
}

HeadTensors with_scale(const SynthSpec& spec, Eigen::MatrixXd q, Eigen::MatrixXd k) {
    HeadTensors h;
    h.q = std::move(q);
    h.k = std::move(k);
    h.softmax_scale = 1.0 / std::sqrt(static_cast<double>(spec.head_dim));
    h.meta.model_id = "synth-" + to_string(spec.kind);
    return h;
}

double bisect_increasing(const std::function<double(double)>& f, double target, double lo, double hi,
                         const char* what) {
    int grow = 0;
    while (f(hi) < target) {
        hi *= 2.0;
        if (++grow > 60)
            throw std::runtime_error(fmt::format("{} calibration: target {} not reachable", what, target));
    }
    if (f(lo) > target)
        throw std::runtime_error(fmt::format("{} calibration: target {} below the attainable range", what, target));
    for (int it = 0; it < 50; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (f(mid) < target)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

} // namespace

HeadTensors gaussian_head(const SynthSpec& spec) {
    check_shape(spec);
    CounterRng rng(spec.seed);
    Eigen::MatrixXd q = normal_matrix(rng, spec.length, spec.head_dim);
    Eigen::MatrixXd k = normal_matrix(rng, spec.length, spec.head_dim);
    return with_scale(spec, std::move(q), std::move(k));
}

HeadTensors sink_head(const SynthSpec& spec) {
    const double strength = spec.params.sink_strength;
    if (!(strength >= 0.0) || !std::isfinite(strength))
        throw std::invalid_argument("sink_strength must be a non-negative finite number");
    HeadTensors h = gaussian_head(spec);
    h.meta.model_id = "synth-sink";
    if (strength == 0.0)
        return h;
    const Eigen::RowVectorXd mean = h.q.colwise().mean();
    const double norm = mean.norm();
    if (norm == 0.0)
        throw std::runtime_error("sink_head: mean query vector is zero");
    h.k.row(0) = strength * mean / norm;
    return h;
}

HeadTensors concentrated_head(const SynthSpec& spec) {
    const double factor = spec.params.concentration_factor;
    if (!(factor >= 1.0) || !std::isfinite(factor))
        throw std::invalid_argument("concentration_factor must be >= 1");
    if (spec.params.target_position < 0 || spec.params.target_position >= spec.length)
        throw std::invalid_argument(fmt::format("target_position {} outside 0..{}", spec.params.target_position,
                                                spec.length - 1));
    HeadTensors h = gaussian_head(spec);
    h.meta.model_id = "synth-concentrated";
    h.k.row(spec.params.target_position) *= factor;
    return h;
}

HeadTensors rank_deficient_head(const SynthSpec& spec) {
    check_shape(spec);
    const Index r = spec.params.target_rank;
    if (r < 1 || r > spec.head_dim)
        throw std::invalid_argument(fmt::format("target_rank {} outside 1..{}", r, spec.head_dim));
    CounterRng rng(spec.seed);
    Eigen::MatrixXd q = normal_matrix(rng, spec.length, spec.head_dim);
    const Eigen::MatrixXd a = normal_matrix(rng, spec.length, r);
    const Eigen::MatrixXd b = normal_matrix(rng, r, spec.head_dim);
    Eigen::MatrixXd k = a * b / std::sqrt(static_cast<double>(r));
    return with_scale(spec, std::move(q), std::move(k));
}

HeadTensors low_rank_noise_head(const SynthSpec& spec) {
    check_shape(spec);
    const Index r = spec.params.target_rank;
    if (r < 1 || r > spec.head_dim)
        throw std::invalid_argument(fmt::format("target_rank {} outside 1..{}", r, spec.head_dim));
    if (!(spec.params.noise_level >= 0.0))
        throw std::invalid_argument("noise_level must be non-negative");
    CounterRng rng(spec.seed);
    const double inv = 1.0 / std::sqrt(static_cast<double>(r));
    const Eigen::MatrixXd aq = normal_matrix(rng, spec.length, r);
    const Eigen::MatrixXd rq = normal_matrix(rng, r, spec.head_dim);
    const Eigen::MatrixXd ak = normal_matrix(rng, spec.length, r);
    const Eigen::MatrixXd rk = normal_matrix(rng, r, spec.head_dim);
    const Eigen::MatrixXd gq = normal_matrix(rng, spec.length, spec.head_dim);
    const Eigen::MatrixXd gk = normal_matrix(rng, spec.length, spec.head_dim);
    const double eta = spec.params.noise_level;
    Eigen::MatrixXd q = aq * rq * inv + eta * gq;
    Eigen::MatrixXd k = ak * rk * inv + eta * gk;
    return with_scale(spec, std::move(q), std::move(k));
}

HeadTensors generate(const SynthSpec& spec) {
    switch (spec.kind) {
    case SynthKind::Gaussian: return gaussian_head(spec);
    case SynthKind::Sink: return sink_head(spec);
    case SynthKind::Concentrated: return concentrated_head(spec);
    case SynthKind::RankDeficient: return rank_deficient_head(spec);
    case SynthKind::LowRankNoise: return low_rank_noise_head(spec);
    }
    throw std::invalid_argument("unknown synth kind");
}

double calibrate_sink_strength(const SynthSpec& base, double target) {
    if (base.length < 2)
        throw std::invalid_argument("sink calibration needs L >= 2");
    auto mean_sink = [&](double strength) {
        SynthSpec s = base;
        s.kind = SynthKind::Sink;
        s.params.sink_strength = strength;
        return mean_sink_energy(causal_energy(logits(sink_head(s))));
    };
    return bisect_increasing(mean_sink, target, 0.0, 1.0, "sink strength");
}

double calibrate_concentration(const SynthSpec& base, double target) {
    if (!(target >= 1.0) || target >= static_cast<double>(base.length))
        throw std::invalid_argument(fmt::format("target mu_K {} outside [1, L)", target));
    auto mu = [&](double factor) {
        SynthSpec s = base;
        s.kind = SynthKind::Concentrated;
        s.params.concentration_factor = factor;
        return key_incoherence(concentrated_head(s).k).mu_k;
    };
    return bisect_increasing(mu, target, 1.0, 2.0, "concentration");
}

std::string synth_spec_to_json(const SynthSpec& spec) {
    json doc;
    doc["kind"] = to_string(spec.kind);
    doc["L"] = spec.length;
    doc["d_h"] = spec.head_dim;
    doc["seed"] = spec.seed;
    doc["params"] = {{"sink_strength", spec.params.sink_strength},
                     {"concentration_factor", spec.params.concentration_factor},
                     {"target_rank", spec.params.target_rank},
                     {"noise_level", spec.params.noise_level},
                     {"target_position", spec.params.target_position}};
    return doc.dump();
}

SynthSpec synth_spec_from_json(const std::string& text) {
    const json doc = json::parse(text, nullptr, false);
    if (doc.is_discarded() || !doc.is_object())
        throw IoError("synth spec: not a JSON object");
    SynthSpec spec;
    try {
        spec.kind = parse_synth_kind(doc.value("kind", std::string("gaussian")));
        spec.length = doc.value("L", spec.length);
        spec.head_dim = doc.value("d_h", spec.head_dim);
        spec.seed = doc.value("seed", spec.seed);
        if (doc.contains("params")) {
            const json& p = doc.at("params");
            spec.params.sink_strength = p.value("sink_strength", spec.params.sink_strength);
            spec.params.concentration_factor = p.value("concentration_factor", spec.params.concentration_factor);
            spec.params.target_rank = p.value("target_rank", spec.params.target_rank);
            spec.params.noise_level = p.value("noise_level", spec.params.noise_level);
            spec.params.target_position = p.value("target_position", spec.params.target_position);
        }
    } catch (const json::exception& e) {
        throw IoError(fmt::format("synth spec: {}", e.what()));
    } catch (const std::invalid_argument& e) {
        throw IoError(fmt::format("synth spec: {}", e.what()));
    }
    return spec;
}

} // namespace efield
