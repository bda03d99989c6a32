#pragma once

// Seeded synthetic image fixtures: textured scene renders plus programmatic
// quality corruptions (blur, over/under-exposure). These give the classifier
// tests ground-truth labels that are true by construction.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <opencv2/imgproc.hpp>

#include "iqtk/labels.hpp"
#include "iqtk/rng.hpp"

namespace iqtk::synthetic {

struct SceneSpec {
    int width = 64;
    int height = 64;
    std::uint64_t seed = 1;
    int shapes = 7;
};

inline cv::Mat solid(int width, int height, cv::Scalar color) {
    return cv::Mat(height, width, CV_8UC3, color);
}

inline cv::Mat checkerboard(int width, int height, int cell) {
    cv::Mat img(height, width, CV_8UC3);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const bool on = ((x / cell) + (y / cell)) % 2 == 0;
            img.at<cv::Vec3b>(y, x) = on ? cv::Vec3b(235, 235, 235) : cv::Vec3b(20, 20, 20);
        }
    }
    return img;
}

// A busy, sharp scene: gradient background, random shapes, mild noise.
inline cv::Mat render_scene(const SceneSpec& spec) {
    Rng rng(spec.seed);
    cv::Mat img(spec.height, spec.width, CV_8UC3);
    const double base = rng.uniform(60.0, 150.0);
    for (int y = 0; y < spec.height; ++y) {
        for (int x = 0; x < spec.width; ++x) {
            const double v = base + 60.0 * static_cast<double>(x) / spec.width -
                             30.0 * static_cast<double>(y) / spec.height;
            const auto c = static_cast<unsigned char>(std::clamp(v, 0.0, 255.0));
            img.at<cv::Vec3b>(y, x) = cv::Vec3b(c, c, c);
        }
    }
    for (int s = 0; s < spec.shapes; ++s) {
        const cv::Scalar color(static_cast<double>(rng.below(256)),
                               static_cast<double>(rng.below(256)),
                               static_cast<double>(rng.below(256)));
        const int cx = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.width)));
        const int cy = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.height)));
        const int r = 3 + static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.width / 4)));
        switch (rng.below(3)) {
            case 0:
                cv::circle(img, {cx, cy}, r, color, cv::FILLED);
                break;
            case 1:
                cv::rectangle(img, {cx - r, cy - r}, {cx + r, cy + r}, color, cv::FILLED);
                break;
            default:
                cv::line(img, {cx - r, cy - r}, {cx + r, cy + r}, color, 2);
                break;
        }
    }
    // pixel noise keeps flat regions from being exactly flat
    for (int y = 0; y < spec.height; ++y) {
        for (int x = 0; x < spec.width; ++x) {
            auto& px = img.at<cv::Vec3b>(y, x);
            for (int ch = 0; ch < 3; ++ch) {
                const int noisy = px[ch] + static_cast<int>(rng.below(17)) - 8;
                px[ch] = static_cast<unsigned char>(std::clamp(noisy, 0, 255));
            }
        }
    }
    return img;
}

inline cv::Mat apply_blur(const cv::Mat& img, double sigma) {
    cv::Mat out;
    const int k = std::max(3, 2 * static_cast<int>(std::ceil(2.0 * sigma)) + 1);
    cv::GaussianBlur(img, out, {k, k}, sigma, sigma, cv::BORDER_REPLICATE);
    return out;
}

// delta in [-255, 255]; positive washes out, negative darkens
inline cv::Mat apply_exposure(const cv::Mat& img, double delta) {
    cv::Mat out;
    img.convertTo(out, -1, 1.0, delta);
    return out;
}

inline cv::Mat rotate180(const cv::Mat& img) {
    cv::Mat out;
    cv::rotate(img, out, cv::ROTATE_180);
    return out;
}

// ---------------------------------------------------------------------------
// Labeled corpora
// ---------------------------------------------------------------------------

struct SyntheticExample {
    std::string image_id;
    cv::Mat image;
    data::FlawLabelSet flaws;
    bool unrecognizable = false;
};

// Recognizability corpus: half sharp scenes, half wrecked (heavy blur plus
// underexposure), labels true by construction.
inline std::vector<SyntheticExample> make_recognizability_corpus(int n, std::uint64_t seed) {
    std::vector<SyntheticExample> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        SceneSpec spec;
        spec.seed = seed + static_cast<std::uint64_t>(i) * 7919;
        SyntheticExample ex;
        ex.image_id = "syn" + std::to_string(i);
        cv::Mat img = render_scene(spec);
        if (i % 2 == 1) {
            img = apply_exposure(apply_blur(img, 6.0), -70.0);
            ex.unrecognizable = true;
            ex.flaws.set(data::FlawChannel::Blur, true);
            ex.flaws.set(data::FlawChannel::Dark, true);
        } else {
            ex.flaws.set(data::FlawChannel::None, true);
        }
        ex.image = img;
        out.push_back(std::move(ex));
    }
    return out;
}

// Flaw corpus: each image gets an independent coin per corruption; BLR, BRT,
// DRK are injected programmatically (BRT and DRK are mutually exclusive).
inline std::vector<SyntheticExample> make_flaw_corpus(int n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<SyntheticExample> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        SceneSpec spec;
        spec.seed = seed ^ (0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(i));
        SyntheticExample ex;
        ex.image_id = "flaw" + std::to_string(i);
        cv::Mat img = render_scene(spec);
        const bool blur = rng.bernoulli(0.5);
        const int exposure = static_cast<int>(rng.below(3));  // 0 none, 1 bright, 2 dark
        if (blur) {
            img = apply_blur(img, 5.0);
            ex.flaws.set(data::FlawChannel::Blur, true);
        }
        if (exposure == 1) {
            img = apply_exposure(img, 110.0);
            ex.flaws.set(data::FlawChannel::Bright, true);
        } else if (exposure == 2) {
            img = apply_exposure(img, -110.0);
            ex.flaws.set(data::FlawChannel::Dark, true);
        }
        if (!ex.flaws.any()) ex.flaws.set(data::FlawChannel::None, true);
        ex.image = img;
        out.push_back(std::move(ex));
    }
    return out;
}

// Reason corpus: class depends on BOTH modalities. Odd indices are wrecked
// (blur + underexposure) and unrecognizable regardless of question; even
// indices are sharp, and the question pool decides answerable vs insufficient
// (asks about content a single photo cannot show).
struct ReasonExampleRaw {
    std::string image_id;
    std::string question;
    cv::Mat image;
    bool answerable = false;
    bool unrecognizable = false;
};

inline std::vector<ReasonExampleRaw> make_reason_corpus(int n, std::uint64_t seed) {
    static const char* answerable_pool[] = {
        "what color is this mug",
        "what kind of drink is in the can",
        "what does the big label say",
        "what color are these shoes",
    };
    static const char* insufficient_pool[] = {
        "when does this coupon expire",
        "is the receipt total printed on the back",
        "when was this carton first opened",
        "does the other side list allergy warnings",
    };
    std::vector<ReasonExampleRaw> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        SceneSpec spec;
        spec.seed = seed + static_cast<std::uint64_t>(i) * 6151;
        ReasonExampleRaw ex;
        ex.image_id = "rq" + std::to_string(i);
        cv::Mat img = render_scene(spec);
        const int rot = (i / 4) % 4;
        if (i % 2 == 1) {
            // wrecked image; question pool alternates so text alone can't decide
            img = apply_exposure(apply_blur(img, 6.0), -70.0);
            ex.unrecognizable = true;
            ex.question = ((i / 2) % 2 == 0) ? answerable_pool[rot] : insufficient_pool[rot];
        } else if (i % 4 == 0) {
            ex.answerable = true;
            ex.question = answerable_pool[rot];
        } else {
            ex.question = insufficient_pool[rot];
        }
        ex.image = img;
        out.push_back(std::move(ex));
    }
    return out;
}

}  // namespace iqtk::synthetic
