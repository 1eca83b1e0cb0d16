// stats.hpp - small order-statistic helpers shared across modules

#ifndef FLOWGATE_STATS_HPP
#define FLOWGATE_STATS_HPP

#include <span>
#include <vector>

namespace flowgate {

/// q-quantile of already sorted values, linear interpolation between the
/// closest ranks (position q * (n - 1)).
double quantile_sorted(std::span<const double> sorted, double q);

/// q-quantile of unsorted values (copies and sorts).
double quantile(std::span<const double> values, double q);

double mean(std::span<const double> values);

/// population standard deviation
double stdev(std::span<const double> values);

} // namespace flowgate

#endif // FLOWGATE_STATS_HPP
