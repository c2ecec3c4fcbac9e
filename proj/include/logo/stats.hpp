#pragma once

#include <span>
#include <vector>

namespace logo::stats {

double mean(std::span<const double> xs);
/// Population standard deviation.
double stddev(std::span<const double> xs);
/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
double sample_stddev(std::span<const double> xs);

/// Half-width of the 95% interval, 1.96 * stddev / sqrt(n).
double ci95(std::span<const double> xs);

/// Ranks starting at 1, ties receive their average rank.
std::vector<double> ranks(std::span<const double> xs);
double pearson(std::span<const double> xs, std::span<const double> ys);
double spearman(std::span<const double> xs, std::span<const double> ys);

}  // namespace logo::stats
