#include <sstream>

#include <gtest/gtest.h>
#include <json.hpp>

#include "efield/energy.hpp"
#include "efield/geometry.hpp"
#include "efield/spectral.hpp"
#include "support.hpp"

using namespace efield;

namespace {

ChannelDecomposition decompose(const HeadTensors& h) {
    return channel_decomposition(row_centered(logits(h)), h.head_dim());
}

} // namespace

TEST(KeyIncoherence, EqualNormsGiveOne) {
    Eigen::MatrixXd k(4, 2);
    k << 1, 0, 0, 1, -1, 0, 0.6, 0.8;
    const KeyGeometry g = key_incoherence(k);
    EXPECT_NEAR(g.mu_k, 1.0, 1e-12);
    EXPECT_DOUBLE_EQ(g.frob_sq, 4.0);
    EXPECT_EQ(g.argmax_position, 0);  // ties break low
}

TEST(KeyIncoherence, SingleRowGivesLength) {
    Eigen::MatrixXd k = Eigen::MatrixXd::Zero(4, 3);
    k.row(2) << 1.0, -2.0, 0.5;
    const KeyGeometry g = key_incoherence(k);
    EXPECT_EQ(g.mu_k, 4.0);
    EXPECT_EQ(g.argmax_position, 2);
    EXPECT_TRUE(std::isinf(g.kappa));
}

TEST(KeyIncoherence, ZeroMatrixRejected) {
    try {
        key_incoherence(Eigen::MatrixXd::Zero(3, 2));
        FAIL();
    } catch (const AnalysisError& e) {
        EXPECT_STREQ(e.what(), "zero key matrix");
    }
}

TEST(KeyIncoherence, RangeAndDefinition) {
    std::mt19937_64 gen(4);
    for (int trial = 0; trial < 50; ++trial) {
        const Index l = 1 + static_cast<Index>(gen() % 200);
        const Index d = 1 + static_cast<Index>(gen() % 40);
        const Eigen::MatrixXd k = test::random_matrix(gen, l, d);
        const KeyGeometry g = key_incoherence(k);
        ASSERT_GE(g.mu_k, 1.0 - 1e-12);
        ASSERT_LE(g.mu_k, static_cast<double>(l) * (1.0 + 1e-12));
        const double max_sq = k.rowwise().squaredNorm().maxCoeff();
        ASSERT_NEAR(g.mu_k, static_cast<double>(l) * max_sq / k.squaredNorm(), 1e-12 * g.mu_k);
        ASSERT_NEAR(g.scale_ratio, k.squaredNorm() / static_cast<double>(l * d), 1e-12 * g.scale_ratio);
    }
}

TEST(KeyIncoherence, ScaleInvariance) {
    std::mt19937_64 gen(5);
    const Eigen::MatrixXd k = test::random_matrix(gen, 30, 5);
    const double base = key_incoherence(k).mu_k;
    for (double c : {1e-3, 0.5, -2.0, 1e4})
        EXPECT_NEAR(key_incoherence(c * k).mu_k, base, 1e-12 * base);
}

TEST(KeyIncoherence, ConditionNumber) {
    Eigen::MatrixXd k = Eigen::MatrixXd::Zero(5, 2);
    k(0, 0) = 4.0;
    k(1, 1) = 2.0;
    const KeyGeometry g = key_incoherence(k);
    EXPECT_NEAR(g.kappa, 2.0, 1e-12);
    EXPECT_NEAR(g.sigma_max, 4.0, 1e-12);
    EXPECT_NEAR(g.sigma_min, 2.0, 1e-12);
    EXPECT_EQ(g.key_rank, 2);

    // L < d_h: K cannot span all d_h directions
    std::mt19937_64 gen(6);
    const KeyGeometry s = key_incoherence(test::random_matrix(gen, 8, 16));
    EXPECT_TRUE(std::isinf(s.kappa));
    EXPECT_EQ(s.sigma_min, 0.0);
}

TEST(KeyIncoherence, GaussianMedianKappaFallsWithLength) {
    auto median_kappa = [](Index l) {
        std::vector<double> ks;
        for (std::uint64_t seed = 0; seed < 31; ++seed) {
            std::mt19937_64 gen(seed * 7 + static_cast<std::uint64_t>(l));
            ks.push_back(key_incoherence(test::random_matrix(gen, l, 16)).kappa);
        }
        std::nth_element(ks.begin(), ks.begin() + 15, ks.end());
        return ks[15];
    };
    EXPECT_GT(median_kappa(32), median_kappa(128));
    EXPECT_GT(median_kappa(128), median_kappa(512));
}

TEST(Ipr, UniformAndOneHot) {
    for (std::size_t l : {1u, 4u, 100u, 512u}) {
        const std::vector<double> u(l, 1.0 / std::sqrt(static_cast<double>(l)));
        EXPECT_NEAR(ipr(u).ipr_times_length, 1.0, 1e-12);
        std::vector<double> e(l, 0.0);
        e[l / 2] = -1.0;
        EXPECT_EQ(ipr(e).ipr_times_length, static_cast<double>(l));
        EXPECT_EQ(ipr(e).ipr, 1.0);
    }
}

TEST(Ipr, RequiresUnitVector) {
    EXPECT_THROW(ipr(std::vector<double>{1.0, 1.0}), AnalysisError);
    EXPECT_THROW(ipr(std::vector<double>{0.0, 0.0}), AnalysisError);
    EXPECT_NO_THROW(ipr(std::vector<double>{1.0 + 1e-9, 0.0}));
}

TEST(Ipr, InvariantUnderSignFlipsAndPermutation) {
    std::mt19937_64 gen(7);
    Eigen::VectorXd v = test::random_matrix(gen, 64, 1);
    v.normalize();
    const double base = ipr(v).ipr;
    Eigen::VectorXd w = v.reverse();
    w(3) = -w(3);
    EXPECT_NEAR(ipr(w).ipr, base, 1e-15);
}

TEST(Ipr, GaussianBaselineNearThree) {
    std::mt19937_64 gen(512);
    double total = 0.0;
    for (int s = 0; s < 400; ++s) {
        Eigen::VectorXd v = test::random_matrix(gen, 512, 1);
        v.normalize();
        total += ipr(v).ipr_times_length;
    }
    EXPECT_NEAR(total / 400.0, 3.0, 0.2);
}

TEST(Delocalization, GaussianHeadSatisfiesBound) {
    const HeadTensors h = test::random_head(1, 256, 16);
    const ChannelDecomposition dec = decompose(h);
    const DelocalizationReport d = delocalization_check(h, dec);
    EXPECT_FALSE(d.rank_deficient_keys);
    ASSERT_EQ(d.ipr_times_length.size(), static_cast<std::size_t>(dec.numerical_rank));
    EXPECT_EQ(d.violations, 0u);
    for (std::size_t k = 0; k < d.satisfied.size(); ++k) {
        EXPECT_TRUE(d.satisfied[k]);
        EXPECT_GE(d.ipr_times_length[k], 1.0 - 1e-12);
        EXPECT_LE(d.ipr_times_length[k], 256.0);
    }
    const KeyGeometry g = key_incoherence(h.k);
    EXPECT_NEAR(d.bound, g.mu_k * 256.0 * std::pow(g.kappa, 4) / 256.0, 1e-9 * d.bound);
}

TEST(Delocalization, ShortContextIsRankDeficient) {
    const HeadTensors h = test::random_head(2, 8, 16);
    const DelocalizationReport d = delocalization_check(h, decompose(h));
    EXPECT_TRUE(d.rank_deficient_keys);
    EXPECT_TRUE(std::isinf(d.bound));
    EXPECT_EQ(d.violations, 0u);
}

TEST(Delocalization, WeightedMeanUsesSquaredSingularValues) {
    const HeadTensors h = test::random_head(3, 64, 4);
    const ChannelDecomposition dec = decompose(h);
    const DelocalizationReport d = delocalization_check(h, dec);
    double num = 0.0;
    double den = 0.0;
    double plain = 0.0;
    for (Index k = 0; k < dec.numerical_rank; ++k) {
        const double w = dec.singular_values(k) * dec.singular_values(k);
        num += w * d.ipr_times_length[k];
        den += w;
        plain += d.ipr_times_length[k];
    }
    EXPECT_NEAR(d.weighted_mean_ipr_times_length, num / den, 1e-12);
    EXPECT_NEAR(d.mean_ipr_times_length, plain / static_cast<double>(dec.numerical_rank), 1e-12);
}

TEST(Delocalization, CenteredKeyBoundNeverViolated) {
    // The Cauchy-Schwarz bound on the centered keys holds for every input,
    // including concentrated and small-d_h heads where the uncentered one can fail.
    std::mt19937_64 gen(8);
    for (int trial = 0; trial < 60; ++trial) {
        const Index l = 16 + static_cast<Index>(gen() % 300);
        const Index d = 1 + static_cast<Index>(gen() % 12);
        HeadTensors h = test::random_head(gen(), l, d);
        if (trial % 3 == 0)
            h.k.row(static_cast<Index>(gen() % l)) *= 20.0;
        const DelocalizationReport r = delocalization_check(h, decompose(h));
        ASSERT_EQ(r.centered_violations, 0u) << "trial " << trial;
        for (double v : r.ipr_times_length)
            ASSERT_LE(v, r.centered_bound * (1.0 + 1e-9));
    }
}

// ---- monitor ----

namespace {

std::string record(const std::string& id, std::int64_t step, std::uint64_t l, double max_sq, double frob_sq) {
    return "{\"head_id\": \"" + id + "\", \"step\": " + std::to_string(step) + ", \"L\": " + std::to_string(l) +
           ", \"max_row_norm_sq\": " + std::to_string(max_sq) + ", \"frob_sq\": " + std::to_string(frob_sq) + "}";
}

} // namespace

TEST(Monitor, UniformNormsNoAlert) {
    KeyNormRecord r{"h", 0, 128, 1.0, 128.0};
    EXPECT_FALSE(evaluate_record(r, 5.0).has_value());
}

TEST(Monitor, MuK26Alerts) {
    KeyNormRecord r{"opt-350m/l3/h7", 1200, 1000, 26.0, 1000.0};
    const auto a = evaluate_record(r, 5.0);
    ASSERT_TRUE(a.has_value());
    EXPECT_NEAR(a->mu_k, 26.0, 1e-12);
    EXPECT_EQ(a->step, 1200);
    EXPECT_EQ(a->head_id, "opt-350m/l3/h7");
}

TEST(Monitor, BoundaryIsStrict) {
    EXPECT_FALSE(evaluate_record({"h", 0, 10, 1.0, 2.0}, 5.0).has_value());  // mu_K = 5 exactly
    EXPECT_TRUE(evaluate_record({"h", 0, 10, 1.0, 2.0}, 4.999).has_value());
}

TEST(Monitor, StreamSkipsMalformedRecords) {
    std::stringstream in;
    in << record("a", 1, 16, 1.0, 16.0) << "\n"
       << "not json\n"
       << "\n"
       << R"({"head_id": "b", "step": 2, "L": 16, "max_row_norm_sq": 1.0})" << "\n"
       << record("c", 3, 16, 2.0, 0.0) << "\n"
       << record("d", 4, 100, 26.0, 100.0) << "\n"
       << record("e", 5, 10, 3.0, 2.0) << "\n";
    std::stringstream out;
    std::stringstream warn;
    const MonitorStats s = monitor_mu_k(in, out, warn, 5.0);
    EXPECT_EQ(s.records, 2u);
    EXPECT_EQ(s.alerts, 1u);
    EXPECT_EQ(s.skipped, 4u);
    std::string line;
    std::getline(out, line);
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("head_id"), "d");
    EXPECT_NEAR(j.at("mu_K").get<double>(), 26.0, 1e-12);
    EXPECT_EQ(j.at("step"), 4);
    EXPECT_FALSE(std::getline(out, line));
    int warnings = 0;
    while (std::getline(warn, line))
        ++warnings;
    EXPECT_EQ(warnings, 4);
}

TEST(Monitor, ParseErrorsAreDescribed) {
    std::string err;
    EXPECT_FALSE(parse_key_norm_record("[1,2]", err).has_value());
    EXPECT_FALSE(err.empty());
    err.clear();
    EXPECT_FALSE(parse_key_norm_record(R"({"head_id": 3, "step": 0, "L": 4, "max_row_norm_sq": 1, "frob_sq": 4})",
                                       err)
                     .has_value());
    EXPECT_FALSE(err.empty());
    err.clear();
    const auto ok = parse_key_norm_record(record("x", 7, 4, 1.0, 4.0), err);
    ASSERT_TRUE(ok.has_value()) << err;
    EXPECT_EQ(ok->length, 4u);
}
