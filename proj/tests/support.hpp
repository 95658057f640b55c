#pragma once

// Shared fixtures and brute-force oracles for the test suites. Everything
// here is deliberately naive: plain loops, long double accumulation, and a
// random source (std::mt19937_64) independent of the library's own RNG.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "efield/tensor_io.hpp"

namespace efield::test {

inline Eigen::MatrixXd random_matrix(std::mt19937_64& gen, Eigen::Index rows, Eigen::Index cols,
                                     double sd = 1.0) {
    std::normal_distribution<double> dist(0.0, sd);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j)
            m(i, j) = dist(gen);
    return m;
}

inline HeadTensors random_head(std::uint64_t seed, Eigen::Index length, Eigen::Index dim, double sd = 1.0) {
    std::mt19937_64 gen(seed);
    HeadTensors h;
    h.q = random_matrix(gen, length, dim, sd);
    h.k = random_matrix(gen, length, dim, sd);
    h.softmax_scale = 1.0 / std::sqrt(static_cast<double>(dim));
    h.meta.model_id = "test";
    h.meta.text_id = "t0";
    return h;
}

inline std::vector<double> random_vector(std::mt19937_64& gen, std::size_t n) {
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> v(n);
    for (double& x : v)
        x = dist(gen);
    return v;
}

/// Z_ij = scale * sum_c Q_ic K_jc, long double accumulation.
inline Eigen::MatrixXd naive_logits(const HeadTensors& h) {
    const Eigen::Index n = h.q.rows();
    Eigen::MatrixXd z(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) {
            long double s = 0.0L;
            for (Eigen::Index c = 0; c < h.q.cols(); ++c)
                s += static_cast<long double>(h.q(i, c)) * h.k(j, c);
            z(i, j) = static_cast<double>(s * h.softmax_scale);
        }
    return z;
}

/// gamma(tau) = (1/N) sum_t x_t x_{t+tau}, O(N^2).
inline std::vector<double> direct_autocovariance(const std::vector<double>& x, std::size_t tau_max) {
    const std::size_t n = x.size();
    std::vector<double> g(tau_max + 1);
    for (std::size_t tau = 0; tau <= tau_max; ++tau) {
        long double s = 0.0L;
        for (std::size_t t = 0; t + tau < n; ++t)
            s += static_cast<long double>(x[t]) * x[t + tau];
        g[tau] = static_cast<double>(s / n);
    }
    return g;
}

inline std::vector<double> scalar_softmax(const std::vector<double>& row) {
    long double mx = row[0];
    for (double v : row)
        mx = std::max<long double>(mx, v);
    long double total = 0.0L;
    std::vector<long double> e(row.size());
    for (std::size_t j = 0; j < row.size(); ++j) {
        e[j] = std::exp(static_cast<long double>(row[j]) - mx);
        total += e[j];
    }
    std::vector<double> p(row.size());
    for (std::size_t j = 0; j < row.size(); ++j)
        p[j] = static_cast<double>(e[j] / total);
    return p;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("efield_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace efield::test
