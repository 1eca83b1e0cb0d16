// Brute-force reference implementations used to cross-check the fast
// code paths: a linear longest-suffix SNI scan and exhaustive ROC sweeps.
#ifndef FLOWGATE_TESTS_ORACLES_HPP
#define FLOWGATE_TESTS_ORACLES_HPP

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "flowgate/types.hpp"

namespace flowgate::test {

inline std::optional<ServiceId> naive_match(const std::vector<std::pair<std::string, ServiceId>> &patterns,
                                            const std::string &domain) {
    std::optional<ServiceId> best;
    std::size_t best_len = 0;
    bool best_exact = false;
    for (const auto &[pat, svc] : patterns) {
        const bool wild = pat.rfind("*.", 0) == 0;
        const std::string suffix = wild ? pat.substr(2) : pat;
        bool hit = false;
        if (wild) {
            hit = domain.size() > suffix.size() + 1 && domain.ends_with("." + suffix);
        } else {
            hit = domain == suffix;
        }
        if (!hit) {
            continue;
        }
        const bool better = !best || suffix.size() > best_len || (suffix.size() == best_len && !wild && !best_exact);
        if (better) {
            best = svc;
            best_len = suffix.size();
            best_exact = !wild;
        }
    }
    return best;
}

/// TPR with the threshold at the linearly interpolated (1 - fpr)-quantile
/// of the known scores.
inline double oracle_tpr(std::vector<double> known, const std::vector<double> &unknown, double fpr) {
    std::sort(known.begin(), known.end());
    const double h = (1.0 - fpr) * static_cast<double>(known.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, known.size() - 1);
    const double thr = known[lo] + (h - static_cast<double>(lo)) * (known[hi] - known[lo]);
    std::size_t above = 0;
    for (double u : unknown) {
        above += u > thr ? 1 : 0;
    }
    return static_cast<double>(above) / static_cast<double>(unknown.size());
}

/// ROC points at every distinct threshold, trapezoids up to gamma, then
/// standardized so that chance is 0.5.
inline double oracle_pauroc(const std::vector<double> &known, const std::vector<double> &unknown, double gamma) {
    std::vector<double> cuts(known);
    cuts.insert(cuts.end(), unknown.begin(), unknown.end());
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    if (cuts.size() == 1) {
        return 0.5;
    }
    std::vector<std::pair<double, double>> pts{{0.0, 0.0}};
    for (double t : cuts) {
        double fp = 0, tp = 0;
        for (double k : known) fp += k >= t ? 1 : 0;
        for (double u : unknown) tp += u >= t ? 1 : 0;
        pts.emplace_back(fp / static_cast<double>(known.size()), tp / static_cast<double>(unknown.size()));
    }
    std::sort(pts.begin(), pts.end());
    double area = 0.0;
    for (std::size_t i = 1; i < pts.size(); ++i) {
        auto [x0, y0] = pts[i - 1];
        auto [x1, y1] = pts[i];
        if (x0 >= gamma) break;
        if (x1 > gamma) {
            y1 = y0 + (y1 - y0) * (gamma - x0) / (x1 - x0);
            x1 = gamma;
        }
        area += (x1 - x0) * (y0 + y1) / 2.0;
    }
    const double lo = gamma * gamma / 2.0;
    return 0.5 * (1.0 + (area - lo) / (gamma - lo));
}

} // namespace flowgate::test

#endif // FLOWGATE_TESTS_ORACLES_HPP
