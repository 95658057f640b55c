#include "efield/numeric.hpp"

#include <algorithm>
#include <cmath>

namespace efield {

namespace {

constexpr std::size_t kPairwiseBlock = 64;

template <typename F>
double pairwise(std::span<const double> v, F&& term) {
    if (v.size() <= kPairwiseBlock) {
        double s = 0.0;
        for (double x : v)
            s += term(x);
        return s;
    }
    const std::size_t half = v.size() / 2;
    return pairwise(v.first(half), term) + pairwise(v.subspan(half), term);
}

} // namespace

double pairwise_sum(std::span<const double> values) {
    return pairwise(values, [](double x) { return x; });
}

double pairwise_sum_sq(std::span<const double> values) {
    return pairwise(values, [](double x) { return x * x; });
}

std::vector<double> softmax(std::span<const double> row) {
    std::vector<double> p(row.size());
    if (row.empty())
        return p;
    const double m = *std::max_element(row.begin(), row.end());
    for (std::size_t j = 0; j < row.size(); ++j)
        p[j] = std::exp(row[j] - m);
    const double z = pairwise_sum(p);
    for (double& x : p)
        x /= z;
    return p;
}

double max_abs(std::span<const double> values) {
    double m = 0.0;
    for (double x : values)
        m = std::max(m, std::abs(x));
    return m;
}

} // namespace efield
