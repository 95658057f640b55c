#include <fstream>
#include <iterator>

#include <gtest/gtest.h>

#include "efield/energy.hpp"
#include "efield/fidelity.hpp"
#include "efield/geometry.hpp"
#include "efield/rng.hpp"
#include "efield/spectral.hpp"
#include "efield/synth.hpp"
#include "support.hpp"

using namespace efield;

namespace {

SynthSpec make(SynthKind kind, Index l, Index d, std::uint64_t seed) {
    SynthSpec s;
    s.kind = kind;
    s.length = l;
    s.head_dim = d;
    s.seed = seed;
    return s;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace

// Reference values from an independent big-integer evaluation of the
// documented stream formula (SplitMix64 finalizer over a Weyl sequence).
TEST(CounterRng, KnownDraws) {
    const CounterRng zero(0);
    EXPECT_EQ(zero.at(0), 0xe220a8397b1dcdafULL);
    EXPECT_EQ(zero.at(1), 0x6e789e6aa1b965f4ULL);
    EXPECT_EQ(zero.at(2), 0x06c45d188009454fULL);
    const CounterRng answer(42);
    EXPECT_EQ(answer.at(0), 0x31373183990900a5ULL);
    EXPECT_EQ(answer.at(2), 0xaa026a611070170dULL);
    const CounterRng top(~std::uint64_t{0});
    EXPECT_EQ(top.at(1), 0xd37c68debc8c25d2ULL);
}

TEST(CounterRng, NormalPairAndUniform) {
    CounterRng rng(7);
    EXPECT_NEAR(rng.next_normal(), -0.04541108490973965, 1e-15);
    EXPECT_NEAR(rng.next_normal(), -0.6059079280125115, 1e-15);
    EXPECT_EQ(rng.counter(), 2u);
    EXPECT_NEAR(rng.next_uniform(), 0.8414270331927484, 1e-16);
}

TEST(CounterRng, UniformRangeAndMoments) {
    CounterRng rng(11);
    double s = 0.0;
    double s2 = 0.0;
    constexpr int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double u = rng.next_uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        s += u;
    }
    for (int i = 0; i < n; ++i) {
        const double z = rng.next_normal();
        s2 += z * z;
    }
    EXPECT_NEAR(s / n, 0.5, 0.005);
    EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Synth, SameSpecSameBytes) {
    const auto dir = test::scratch_dir("synth_bytes");
    for (auto kind : {SynthKind::Gaussian, SynthKind::Sink, SynthKind::Concentrated, SynthKind::RankDeficient,
                      SynthKind::LowRankNoise}) {
        SynthSpec s = make(kind, 33, 7, 99);
        s.params.sink_strength = 3.0;
        s.params.concentration_factor = 4.0;
        s.params.target_rank = 2;
        s.params.noise_level = 0.2;
        s.params.target_position = 5;
        const HeadTensors a = generate(s);
        const HeadTensors b = generate(s);
        EXPECT_EQ(a.q, b.q);
        EXPECT_EQ(a.k, b.k);
        write_head_dump(a, dir / "a.eft");
        write_head_dump(b, dir / "b.eft");
        EXPECT_EQ(slurp(dir / "a.eft"), slurp(dir / "b.eft")) << to_string(kind);
        s.seed = 100;
        EXPECT_NE(generate(s).q, a.q);
    }
}

TEST(Synth, GaussianShapeAndScale) {
    const HeadTensors h = gaussian_head(make(SynthKind::Gaussian, 20, 9, 1));
    EXPECT_EQ(h.q.rows(), 20);
    EXPECT_EQ(h.k.cols(), 9);
    EXPECT_DOUBLE_EQ(h.softmax_scale, 1.0 / 3.0);
    // Q is drawn before K from one stream
    CounterRng rng(1);
    EXPECT_EQ(h.q(0, 0), rng.next_normal());
    EXPECT_EQ(h.q(0, 1), rng.next_normal());
    EXPECT_THROW(gaussian_head(make(SynthKind::Gaussian, 0, 4, 1)), std::invalid_argument);
}

TEST(Synth, GaussianMuKMedian) {
    std::vector<double> mus;
    for (std::uint64_t seed = 0; seed < 200; ++seed)
        mus.push_back(key_incoherence(gaussian_head(make(SynthKind::Gaussian, 256, 64, seed)).k).mu_k);
    const double m = median(mus);
    EXPECT_GE(m, 1.2);
    EXPECT_LE(m, 2.5);
}

TEST(Synth, GaussianIprNearThree) {
    double total = 0.0;
    int count = 0;
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        const HeadTensors h = gaussian_head(make(SynthKind::Gaussian, 256, 16, seed));
        const ChannelDecomposition dec = channel_decomposition(row_centered(logits(h)), 16);
        for (Index k = 0; k < dec.numerical_rank; ++k) {
            total += ipr(Eigen::VectorXd(dec.key_profiles.col(k))).ipr_times_length;
            ++count;
        }
    }
    EXPECT_NEAR(total / count, 3.0, 0.3);
}

TEST(Synth, SinkStrengthZeroIsGaussian) {
    const SynthSpec g = make(SynthKind::Gaussian, 40, 8, 5);
    SynthSpec s = g;
    s.kind = SynthKind::Sink;
    s.params.sink_strength = 0.0;
    EXPECT_EQ(generate(s).k, generate(g).k);
    s.params.sink_strength = -1.0;
    EXPECT_THROW(generate(s), std::invalid_argument);
}

TEST(Synth, SinkKeyIsScaledMeanQuery) {
    SynthSpec s = make(SynthKind::Sink, 50, 8, 6);
    s.params.sink_strength = 4.0;
    const HeadTensors h = generate(s);
    const Eigen::RowVectorXd mean = h.q.colwise().mean();
    EXPECT_TRUE(h.k.row(0).isApprox(4.0 * mean / mean.norm(), 1e-14));
    EXPECT_NEAR(h.k.row(0).norm(), 4.0, 1e-13);
    EXPECT_EQ(h.k.row(1), gaussian_head(s).k.row(1));
}

TEST(Synth, SinkCalibrationHitsBand) {
    const SynthSpec base = make(SynthKind::Sink, 256, 64, 3);
    const double strength = calibrate_sink_strength(base, 6.1);
    SynthSpec s = base;
    s.params.sink_strength = strength;
    const HeadTensors h = generate(s);
    const double sink = mean_sink_energy(causal_energy(logits(h)));
    EXPECT_GE(sink, 5.0);
    EXPECT_LE(sink, 7.0);
    EXPECT_NEAR(sink, 6.1, 1e-6);
    // the same strength twice gives the same answer
    EXPECT_EQ(calibrate_sink_strength(base, 6.1), strength);
}

TEST(Synth, StrongSinkRaisesMuK) {
    SynthSpec s = make(SynthKind::Sink, 256, 64, 8);
    const double base = key_incoherence(gaussian_head(s).k).mu_k;
    s.params.sink_strength = 100.0;
    EXPECT_GT(key_incoherence(generate(s).k).mu_k, base);
}

TEST(Synth, ConcentratedMatchesClosedForm) {
    for (double c : {1.0, 3.0, 10.0, 40.0}) {
        SynthSpec s = make(SynthKind::Concentrated, 128, 32, 12);
        s.params.concentration_factor = c;
        s.params.target_position = 17;
        const HeadTensors base = gaussian_head(s);
        const HeadTensors h = generate(s);
        // exact oracle from the base row norms
        const Eigen::VectorXd norms = base.k.rowwise().squaredNorm();
        const double target = c * c * norms(17);
        const double total = norms.sum() - norms(17) + target;
        double mx = target;
        for (Index j = 0; j < 128; ++j)
            if (j != 17)
                mx = std::max(mx, norms(j));
        EXPECT_NEAR(key_incoherence(h.k).mu_k, 128.0 * mx / total, 1e-10);
    }
    // equal-norm closed form L c^2 / (c^2 + L - 1)
    SynthSpec s = make(SynthKind::Concentrated, 64, 512, 2);
    s.params.concentration_factor = 30.0;
    const double c2 = 900.0;
    EXPECT_NEAR(key_incoherence(generate(s).k).mu_k, 64.0 * c2 / (c2 + 63.0), 0.5);
}

TEST(Synth, ConcentratedErrors) {
    SynthSpec s = make(SynthKind::Concentrated, 10, 4, 1);
    s.params.target_position = 10;
    EXPECT_THROW(generate(s), std::invalid_argument);
    s.params.target_position = 0;
    s.params.concentration_factor = 0.5;
    EXPECT_THROW(generate(s), std::invalid_argument);
}

TEST(Synth, CalibratedConcentrationAlertsAt26) {
    SynthSpec s = make(SynthKind::Concentrated, 256, 64, 4);
    s.params.target_position = 100;
    s.params.concentration_factor = calibrate_concentration(s, 26.0);
    const KeyGeometry g = key_incoherence(generate(s).k);
    EXPECT_NEAR(g.mu_k, 26.0, 1e-6);
    EXPECT_EQ(g.argmax_position, 100);
    const KeyNormRecord rec{"synthetic", 0, 256, g.max_row_norm_sq, g.frob_sq};
    EXPECT_TRUE(evaluate_record(rec, 5.0).has_value());
}

TEST(Synth, RankDeficientKeysGiveInfiniteKappa) {
    SynthSpec s = make(SynthKind::RankDeficient, 64, 8, 1);
    s.params.target_rank = 2;
    const KeyGeometry g = key_incoherence(generate(s).k);
    EXPECT_TRUE(std::isinf(g.kappa));
    EXPECT_EQ(g.key_rank, 2);
    s.params.target_rank = 9;
    EXPECT_THROW(generate(s), std::invalid_argument);
}

TEST(Synth, LowRankNoiseFreeIsExact) {
    SynthSpec s = make(SynthKind::LowRankNoise, 96, 12, 2);
    s.params.target_rank = 3;
    const HeadTensors h = generate(s);
    EXPECT_NEAR(svd_fidelity(row_centered(logits(h)).etilde, 3, FidelityDomain::Full), 1.0, 1e-10);
}

TEST(Synth, LowRankNoiseAtTenPercent) {
    SynthSpec s = make(SynthKind::LowRankNoise, 256, 32, 3);
    s.params.target_rank = 3;
    s.params.noise_level = 0.1;
    EXPECT_GE(svd_fidelity(row_centered(logits(generate(s))).etilde, 3, FidelityDomain::Full), 0.95);
}

TEST(Synth, EveryKindPassesEnergyInvariants) {
    for (auto kind : {SynthKind::Gaussian, SynthKind::Sink, SynthKind::Concentrated, SynthKind::RankDeficient,
                      SynthKind::LowRankNoise}) {
        SynthSpec s = make(kind, 80, 6, 21);
        s.params.sink_strength = 5.0;
        s.params.concentration_factor = 8.0;
        s.params.target_rank = 2;
        s.params.noise_level = 0.3;
        const LogitMatrix z = logits(generate(s));
        EXPECT_LE(row_sum_violation(causal_energy(z)), 1e-9);
        const RowCenteredLogit et = row_centered(z);
        EXPECT_LE(row_sum_violation(et), 1e-9);
        EXPECT_LE(channel_decomposition(et, 6).numerical_rank, 7);
    }
}

TEST(SynthSpecJson, RoundTripAndDefaults) {
    SynthSpec s = make(SynthKind::LowRankNoise, 300, 24, 123456789012345ULL);
    s.params.noise_level = 0.25;
    s.params.target_rank = 4;
    s.params.target_position = 7;
    s.params.concentration_factor = 2.5;
    s.params.sink_strength = 1.5;
    const SynthSpec r = synth_spec_from_json(synth_spec_to_json(s));
    EXPECT_EQ(r.kind, s.kind);
    EXPECT_EQ(r.length, 300);
    EXPECT_EQ(r.head_dim, 24);
    EXPECT_EQ(r.seed, s.seed);
    EXPECT_EQ(r.params.noise_level, 0.25);
    EXPECT_EQ(r.params.target_rank, 4);
    EXPECT_EQ(r.params.target_position, 7);
    EXPECT_EQ(r.params.concentration_factor, 2.5);
    EXPECT_EQ(r.params.sink_strength, 1.5);
    EXPECT_EQ(generate(r).q, generate(s).q);

    const SynthSpec d = synth_spec_from_json(R"({"kind": "sink", "L": 16})");
    EXPECT_EQ(d.kind, SynthKind::Sink);
    EXPECT_EQ(d.length, 16);
    EXPECT_EQ(d.head_dim, 8);
    EXPECT_THROW(synth_spec_from_json(R"({"kind": "banana"})"), IoError);
    EXPECT_THROW(synth_spec_from_json("[]"), IoError);
    EXPECT_THROW(synth_spec_from_json(R"({"L": "many"})"), IoError);
}
