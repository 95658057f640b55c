#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace efield {

/// Pairwise (cascade) summation with a fixed split order. Results are
/// independent of thread schedule, which the six-decimal bridge checks rely on.
double pairwise_sum(std::span<const double> values);

/// Pairwise sum of squares.
double pairwise_sum_sq(std::span<const double> values);

/// Numerically stable softmax (max subtraction).
std::vector<double> softmax(std::span<const double> row);

double max_abs(std::span<const double> values);

} // namespace efield
