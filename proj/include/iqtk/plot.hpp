#pragma once

// Static chart rendering with OpenCV primitives: prevalence bars, an
// interrelation heatmap, PR curves, and paired score histograms. Charts are
// drawn onto fixed-size canvases so repeated runs produce identical files.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "iqtk/error.hpp"
#include "iqtk/eval.hpp"
#include "iqtk/labels.hpp"
#include "iqtk/stats.hpp"

namespace iqtk::plot {

namespace detail {

inline const cv::Scalar kInk{40, 40, 40};
inline const cv::Scalar kBar{180, 120, 40};     // BGR steel blue
inline const cv::Scalar kBarAlt{60, 140, 230};  // BGR orange
inline const cv::Scalar kGrid{220, 220, 220};

inline cv::Mat canvas(int width, int height) {
    return cv::Mat(height, width, CV_8UC3, cv::Scalar(255, 255, 255));
}

inline void label(cv::Mat& img, const std::string& text, cv::Point at, double scale = 0.4) {
    cv::putText(img, text, at, cv::FONT_HERSHEY_SIMPLEX, scale, kInk, 1, cv::LINE_AA);
}

inline std::string fixed3(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

}  // namespace detail

inline void save_png(const cv::Mat& img, const std::string& path) {
    if (!cv::imwrite(path, img)) throw ConfigError("cannot write plot: " + path);
}

// Per-channel flaw prevalence plus the unrecognizable rate as a ninth bar.
inline cv::Mat prevalence_chart(const std::array<double, data::kFlawChannelCount>& prevalence,
                                double prevalence_unrecognizable) {
    const int w = 640, h = 420, left = 50, bottom = 370, top = 40;
    cv::Mat img = detail::canvas(w, h);
    detail::label(img, "label prevalence", {left, 22}, 0.5);
    for (int g = 0; g <= 4; ++g) {
        const int y = bottom - g * (bottom - top) / 4;
        cv::line(img, {left, y}, {w - 20, y}, detail::kGrid, 1);
        detail::label(img, detail::fixed3(0.25 * g), {6, y + 4}, 0.35);
    }
    const int n = data::kFlawChannelCount + 1;
    const int slot = (w - left - 20) / n;
    for (int i = 0; i < n; ++i) {
        const bool unrec = i == data::kFlawChannelCount;
        const double v =
            unrec ? prevalence_unrecognizable : prevalence[static_cast<std::size_t>(i)];
        const double clamped = std::clamp(v, 0.0, 1.0);
        const int x0 = left + i * slot + slot / 6;
        const int x1 = left + (i + 1) * slot - slot / 6;
        const int y = bottom - static_cast<int>(std::lround(clamped * (bottom - top)));
        cv::rectangle(img, {x0, y}, {x1, bottom}, unrec ? detail::kBarAlt : detail::kBar,
                      cv::FILLED);
        const char* code = unrec ? "UNR" : data::kFlawCodes[static_cast<std::size_t>(i)];
        detail::label(img, code, {x0, bottom + 16});
        detail::label(img, detail::fixed3(v), {x0 - 2, y - 6}, 0.33);
    }
    cv::line(img, {left, bottom}, {w - 20, bottom}, detail::kInk, 1);
    cv::line(img, {left, top}, {left, bottom}, detail::kInk, 1);
    return img;
}

// 8x8 heatmap of interrelation values (reported x100, red positive / blue
// negative); undefined cells are hatched gray.
inline cv::Mat interrelation_heatmap(const stats::InterrelationMatrix& m) {
    const int cell = 56, left = 60, top = 60;
    const int w = left + cell * data::kFlawChannelCount + 20;
    const int h = top + cell * data::kFlawChannelCount + 20;
    cv::Mat img = detail::canvas(w, h);
    detail::label(img, "interrelation index (x100)", {left, 24}, 0.5);
    for (int i = 0; i < data::kFlawChannelCount; ++i) {
        detail::label(img, data::kFlawCodes[static_cast<std::size_t>(i)],
                      {8, top + i * cell + cell / 2 + 4});
        detail::label(img, data::kFlawCodes[static_cast<std::size_t>(i)],
                      {left + i * cell + 10, top - 8});
        for (int j = 0; j < data::kFlawChannelCount; ++j) {
            const auto& e = m[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
            const cv::Rect rect(left + j * cell, top + i * cell, cell, cell);
            if (!e.defined) {
                cv::rectangle(img, rect, cv::Scalar(235, 235, 235), cv::FILLED);
                cv::line(img, rect.tl(), rect.br(), cv::Scalar(200, 200, 200), 1);
            } else {
                const double scaled = std::clamp(e.value * 100.0, -100.0, 100.0);
                const double a = std::abs(scaled) / 100.0;
                // fade white -> red for positive, white -> blue for negative
                const int fade = static_cast<int>(std::lround(255.0 * (1.0 - a)));
                const cv::Scalar color = scaled >= 0.0
                                             ? cv::Scalar(fade, fade, 255)
                                             : cv::Scalar(255, fade, fade);
                cv::rectangle(img, rect, color, cv::FILLED);
                char buf[16];
                std::snprintf(buf, sizeof(buf), "%.1f", e.value * 100.0);
                detail::label(img, buf, {rect.x + 6, rect.y + cell / 2 + 4}, 0.35);
            }
            cv::rectangle(img, rect, detail::kGrid, 1);
        }
    }
    return img;
}

// Precision-recall curve; recall on x, precision on y, both in [0,1].
inline cv::Mat pr_curve_chart(const std::vector<eval::PrPoint>& points) {
    const int w = 520, h = 480, left = 60, bottom = 420, top = 50, right = 480;
    cv::Mat img = detail::canvas(w, h);
    detail::label(img, "precision-recall", {left, 24}, 0.5);
    for (int g = 0; g <= 4; ++g) {
        const int y = bottom - g * (bottom - top) / 4;
        const int x = left + g * (right - left) / 4;
        cv::line(img, {left, y}, {right, y}, detail::kGrid, 1);
        cv::line(img, {x, top}, {x, bottom}, detail::kGrid, 1);
        detail::label(img, detail::fixed3(0.25 * g), {6, y + 4}, 0.33);
        detail::label(img, detail::fixed3(0.25 * g), {x - 12, bottom + 16}, 0.33);
    }
    const auto to_px = [&](const eval::PrPoint& p) {
        const int x = left + static_cast<int>(std::lround(p.recall * (right - left)));
        const int y = bottom - static_cast<int>(std::lround(p.precision * (bottom - top)));
        return cv::Point(x, y);
    };
    for (std::size_t i = 0; i + 1 < points.size(); ++i) {
        cv::line(img, to_px(points[i]), to_px(points[i + 1]), detail::kBar, 2, cv::LINE_AA);
    }
    for (const auto& p : points) cv::circle(img, to_px(p), 3, detail::kBarAlt, cv::FILLED);
    cv::line(img, {left, bottom}, {right, bottom}, detail::kInk, 1);
    cv::line(img, {left, top}, {left, bottom}, detail::kInk, 1);
    detail::label(img, "recall", {right - 40, bottom + 30});
    detail::label(img, "precision", {left + 4, top - 8});
    return img;
}

// Two histograms over the same binning, drawn as paired bars per bin.
inline cv::Mat histogram_pair_chart(const eval::Histogram& a, const eval::Histogram& b,
                                    const std::string& name_a = "group A",
                                    const std::string& name_b = "group B") {
    if (a.counts.size() != b.counts.size() || a.counts.empty()) {
        throw DimensionError("histogram chart: bin layout mismatch");
    }
    const int w = 640, h = 420, left = 50, bottom = 370, top = 50;
    cv::Mat img = detail::canvas(w, h);
    detail::label(img, "score distributions", {left, 22}, 0.5);
    std::int64_t peak = 1;
    for (std::size_t i = 0; i < a.counts.size(); ++i) {
        peak = std::max({peak, a.counts[i], b.counts[i]});
    }
    const int n = static_cast<int>(a.counts.size());
    const int slot = (w - left - 20) / n;
    for (int i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(i);
        const int xa0 = left + i * slot + 2;
        const int xa1 = xa0 + slot / 2 - 2;
        const int xb1 = left + (i + 1) * slot - 2;
        const int ya = bottom - static_cast<int>(std::lround(
                                    static_cast<double>(a.counts[k]) / peak * (bottom - top)));
        const int yb = bottom - static_cast<int>(std::lround(
                                    static_cast<double>(b.counts[k]) / peak * (bottom - top)));
        cv::rectangle(img, {xa0, ya}, {xa1, bottom}, detail::kBar, cv::FILLED);
        cv::rectangle(img, {xa1 + 2, yb}, {xb1, bottom}, detail::kBarAlt, cv::FILLED);
    }
    cv::line(img, {left, bottom}, {w - 20, bottom}, detail::kInk, 1);
    detail::label(img, detail::fixed3(a.lo), {left, bottom + 16}, 0.33);
    detail::label(img, detail::fixed3(a.hi), {w - 60, bottom + 16}, 0.33);
    cv::rectangle(img, {left, h - 28}, {left + 12, h - 16}, detail::kBar, cv::FILLED);
    detail::label(img, name_a, {left + 18, h - 18});
    cv::rectangle(img, {left + 150, h - 28}, {left + 162, h - 16}, detail::kBarAlt, cv::FILLED);
    detail::label(img, name_b, {left + 168, h - 18});
    return img;
}

}  // namespace iqtk::plot
