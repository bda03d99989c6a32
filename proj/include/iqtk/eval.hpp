#pragma once

// Ranking and threshold metrics: average precision, precision/recall/F1,
// PR curves, and score-distribution overlap between two label groups.
//
// AP is the per-positive precision average under descending-score ranking;
// ties break by stable input order. Degenerate precision (no predicted
// positives) is flagged-undefined rather than silently zero.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "iqtk/error.hpp"

namespace iqtk::eval {

using json = nlohmann::json;

// Indices sorted by (score descending, original index ascending).
inline std::vector<std::size_t> ranking(const std::vector<double>& scores) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    return idx;
}

inline std::int64_t count_positives(const std::vector<bool>& labels) {
    std::int64_t n = 0;
    for (bool b : labels)
        if (b) ++n;
    return n;
}

// Mean over positives of precision at each positive's rank.
inline double average_precision(const std::vector<double>& scores,
                                const std::vector<bool>& labels) {
    if (scores.size() != labels.size()) {
        throw DimensionError("average_precision: scores/labels size mismatch");
    }
    const std::int64_t n_pos = count_positives(labels);
    if (n_pos == 0) throw UndefinedMetricError("average_precision: no positive labels");
    const auto order = ranking(scores);
    double sum = 0.0;
    std::int64_t cum_pos = 0;
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        if (labels[order[rank]]) {
            ++cum_pos;
            sum += static_cast<double>(cum_pos) / static_cast<double>(rank + 1);
        }
    }
    return sum / static_cast<double>(n_pos);
}

struct Prf {
    std::optional<double> precision;  // undefined when nothing is predicted positive
    std::optional<double> recall;     // undefined when there are no positives
    std::optional<double> f1;         // undefined when either component is
    std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

// Threshold convention: predicted positive iff score >= threshold.
inline Prf prf_at_threshold(const std::vector<double>& scores, const std::vector<bool>& labels,
                            double threshold = 0.5) {
    if (scores.size() != labels.size()) {
        throw DimensionError("prf_at_threshold: scores/labels size mismatch");
    }
    Prf r;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool pred = scores[i] >= threshold;
        if (pred && labels[i])
            ++r.tp;
        else if (pred)
            ++r.fp;
        else if (labels[i])
            ++r.fn;
        else
            ++r.tn;
    }
    if (r.tp + r.fp > 0) {
        r.precision = static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp);
    }
    if (r.tp + r.fn > 0) {
        r.recall = static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn);
    }
    if (r.precision && r.recall) {
        const double p = *r.precision, rec = *r.recall;
        r.f1 = (p + rec > 0.0) ? 2.0 * p * rec / (p + rec) : 0.0;
    }
    return r;
}

struct PrPoint {
    double threshold = 0.0;
    double recall = 0.0;
    double precision = 0.0;
};

// One point per distinct score, thresholds descending, so recall is
// non-decreasing along the curve. Consistent with prf_at_threshold at every
// emitted threshold.
inline std::vector<PrPoint> pr_curve(const std::vector<double>& scores,
                                     const std::vector<bool>& labels) {
    if (scores.size() != labels.size()) {
        throw DimensionError("pr_curve: scores/labels size mismatch");
    }
    const std::int64_t n_pos = count_positives(labels);
    if (n_pos == 0) throw UndefinedMetricError("pr_curve: no positive labels");
    const auto order = ranking(scores);
    std::vector<PrPoint> points;
    std::int64_t tp = 0, pred = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
        ++pred;
        if (labels[order[i]]) ++tp;
        const bool last_of_threshold =
            i + 1 == order.size() || scores[order[i + 1]] != scores[order[i]];
        if (last_of_threshold) {
            PrPoint p;
            p.threshold = scores[order[i]];
            p.recall = static_cast<double>(tp) / static_cast<double>(n_pos);
            p.precision = static_cast<double>(tp) / static_cast<double>(pred);
            points.push_back(p);
        }
    }
    return points;
}

// ---------------------------------------------------------------------------
// Score-distribution overlap between two groups (shared binning)
// ---------------------------------------------------------------------------

struct Histogram {
    double lo = 0.0, hi = 0.0;
    std::vector<std::int64_t> counts;
    double bin_width() const {
        return counts.empty() ? 0.0 : (hi - lo) / static_cast<double>(counts.size());
    }
};

struct OverlapResult {
    double coefficient = 0.0;  // sum over bins of min(densityA, densityB) * width
    Histogram hist_a, hist_b;
};

inline Histogram make_histogram(const std::vector<double>& xs, double lo, double hi, int bins) {
    Histogram h;
    h.lo = lo;
    h.hi = hi;
    h.counts.assign(static_cast<std::size_t>(bins), 0);
    const double width = (hi - lo) / static_cast<double>(bins);
    for (double x : xs) {
        int b;
        if (width <= 0.0) {
            b = 0;
        } else {
            b = static_cast<int>((x - lo) / width);
            if (b < 0) b = 0;
            if (b >= bins) b = bins - 1;  // hi is inclusive in the last bin
        }
        ++h.counts[static_cast<std::size_t>(b)];
    }
    return h;
}

inline OverlapResult distribution_overlap(const std::vector<double>& group_a,
                                          const std::vector<double>& group_b, int bins = 50) {
    if (group_a.empty() || group_b.empty()) {
        throw UndefinedMetricError("distribution_overlap: empty group");
    }
    if (bins < 1) throw UndefinedMetricError("distribution_overlap: bins must be >= 1");
    double lo = group_a[0], hi = group_a[0];
    for (double x : group_a) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    for (double x : group_b) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    OverlapResult r;
    r.hist_a = make_histogram(group_a, lo, hi, bins);
    r.hist_b = make_histogram(group_b, lo, hi, bins);
    if (hi == lo) {
        // both groups are point masses at the same location
        r.coefficient = 1.0;
        return r;
    }
    const double width = (hi - lo) / static_cast<double>(bins);
    const double na = static_cast<double>(group_a.size());
    const double nb = static_cast<double>(group_b.size());
    double overlap = 0.0;
    for (int b = 0; b < bins; ++b) {
        const double da = static_cast<double>(r.hist_a.counts[static_cast<std::size_t>(b)]) /
                          (na * width);
        const double db = static_cast<double>(r.hist_b.counts[static_cast<std::size_t>(b)]) /
                          (nb * width);
        overlap += std::min(da, db) * width;
    }
    r.coefficient = overlap;
    return r;
}

// ---------------------------------------------------------------------------
// Report container
// ---------------------------------------------------------------------------

struct EvalReport {
    std::optional<double> ap;
    Prf prf;
    std::vector<PrPoint> pr_points;
    std::int64_t n_pos = 0, n_neg = 0;
    double threshold = 0.5;
};

inline EvalReport evaluate_scores(const std::vector<double>& scores,
                                  const std::vector<bool>& labels, double threshold = 0.5) {
    EvalReport r;
    r.threshold = threshold;
    r.n_pos = count_positives(labels);
    r.n_neg = static_cast<std::int64_t>(labels.size()) - r.n_pos;
    r.prf = prf_at_threshold(scores, labels, threshold);
    if (r.n_pos > 0) {
        r.ap = average_precision(scores, labels);
        r.pr_points = pr_curve(scores, labels);
    }
    return r;
}

inline json eval_report_to_json(const EvalReport& r) {
    json j;
    j["ap"] = r.ap ? json(*r.ap) : json();
    j["precision"] = r.prf.precision ? json(*r.prf.precision) : json();
    j["recall"] = r.prf.recall ? json(*r.prf.recall) : json();
    j["f1"] = r.prf.f1 ? json(*r.prf.f1) : json();
    j["tp"] = r.prf.tp;
    j["fp"] = r.prf.fp;
    j["fn"] = r.prf.fn;
    j["tn"] = r.prf.tn;
    j["n_pos"] = r.n_pos;
    j["n_neg"] = r.n_neg;
    j["threshold"] = r.threshold;
    json pts = json::array();
    for (const auto& p : r.pr_points) {
        pts.push_back(json{{"threshold", p.threshold},
                           {"recall", p.recall},
                           {"precision", p.precision}});
    }
    j["pr_curve"] = std::move(pts);
    return j;
}

inline std::string pr_curve_csv(const std::vector<PrPoint>& points) {
    std::string out = "threshold,recall,precision\n";
    char buf[96];
    for (const auto& p : points) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g\n", p.threshold, p.recall,
                      p.precision);
        out += buf;
    }
    return out;
}

}  // namespace iqtk::eval
