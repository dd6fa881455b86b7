#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "vflhlp/common.hpp"

namespace vflhlp {

/// Area under the ROC curve as the Mann-Whitney statistic:
/// (concordant pairs + 0.5 * tied pairs) / (positives * negatives).
/// Sort-based, O(n log n); tied scores share their average rank.
inline double auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw SchemaError("auc: scores/labels length mismatch");
    std::size_t pos = 0;
    for (int y : labels) {
        if (y != 0 && y != 1) throw SchemaError("auc: labels must be 0 or 1");
        pos += static_cast<std::size_t>(y);
    }
    const std::size_t neg = labels.size() - pos;
    if (pos == 0 || neg == 0) throw UndefinedMetric("auc is undefined when only one class is present");
    for (double s : scores) {
        if (std::isnan(s)) throw SchemaError("auc: NaN score");
    }

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Twice the rank sum of positives keeps every quantity an exact integer.
    double twice_rank_sum = 0.0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        std::size_t tied_pos = 0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            tied_pos += static_cast<std::size_t>(labels[order[j]]);
            ++j;
        }
        // ranks i+1 .. j, average (i + 1 + j) / 2
        twice_rank_sum += static_cast<double>(tied_pos) * static_cast<double>(i + 1 + j);
        i = j;
    }
    const double p = static_cast<double>(pos);
    const double twice_u = twice_rank_sum - p * (p + 1.0);
    return twice_u / (2.0 * p * static_cast<double>(neg));
}

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation; 0 for a single value
    std::size_t count = 0;
};

inline MeanStd mean_std(std::span<const double> v) {
    MeanStd out;
    out.count = v.size();
    if (v.empty()) return out;
    double s = 0.0;
    for (double x : v) s += x;
    out.mean = s / static_cast<double>(v.size());
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - out.mean) * (x - out.mean);
        out.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    return out;
}

}  // namespace vflhlp
