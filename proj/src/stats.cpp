#include "flowgate/stats.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace flowgate {

double quantile_sorted(std::span<const double> sorted, double q) {
    if (sorted.empty()) {
        throw std::invalid_argument("quantile of an empty sample");
    }
    if (!(q >= 0.0 && q <= 1.0)) {
        throw std::invalid_argument("quantile level outside [0, 1]");
    }
    const double h = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= sorted.size()) {
        return sorted.back();
    }
    const double frac = h - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

double quantile(std::span<const double> values, double q) {
    std::vector<double> v(values.begin(), values.end());
    std::sort(v.begin(), v.end());
    return quantile_sorted(v, q);
}

double mean(std::span<const double> values) {
    if (values.empty()) {
        throw std::invalid_argument("mean of an empty sample");
    }
    double s = 0.0;
    for (double v : values) {
        s += v;
    }
    return s / static_cast<double>(values.size());
}

double stdev(std::span<const double> values) {
    const double m = mean(values);
    double s = 0.0;
    for (double v : values) {
        s += (v - m) * (v - m);
    }
    return std::sqrt(s / static_cast<double>(values.size()));
}

} // namespace flowgate
