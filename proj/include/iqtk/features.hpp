#pragma once

// Image feature extraction for the classifier heads.
//
// Backbones are pluggable by id. "iqtk-lite-8" is the built-in deterministic
// filter-bank backbone (per-cell intensity/gradient statistics) used by the
// test fixtures and the desk-scale pipeline; external pretrained backbones
// (resnet152, xception) run through OpenCV dnn and require a weights file.
// Classical SIFT-statistics and HOG features feed the linear baselines.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <opencv2/dnn.hpp>
#include <opencv2/features2d.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <opencv2/objdetect.hpp>

#include "iqtk/error.hpp"
#include "iqtk/hashing.hpp"

namespace iqtk::features {

using Mat = Eigen::MatrixXd;

// ---------------------------------------------------------------------------
// Feature tensor
// ---------------------------------------------------------------------------

enum class FeatureKind { grid, object };

// Grid features are stored flattened: row k = cell (k / W, k % W), so grid
// and object tensors share one (regions x channels) layout.
struct FeatureTensor {
    FeatureKind kind = FeatureKind::grid;
    int height = 0, width = 0;  // grid only; 0x0 for object
    Mat data;                   // (K, C); grid K = height * width
    std::string backbone_id;
    std::string preprocessing_hash;

    Eigen::Index regions() const { return data.rows(); }
    Eigen::Index channels() const { return data.cols(); }
};

inline void validate_tensor(const FeatureTensor& t) {
    if (t.data.cols() < 1) throw SchemaError("feature tensor: C must be >= 1");
    if (t.kind == FeatureKind::grid) {
        if (t.height < 1 || t.width < 1) {
            throw SchemaError("feature tensor: grid H and W must be >= 1");
        }
        if (t.data.rows() != static_cast<Eigen::Index>(t.height) * t.width) {
            throw SchemaError("feature tensor: grid rows must equal H*W");
        }
    } else if (t.data.rows() < 1) {
        throw SchemaError("feature tensor: object K must be >= 1");
    }
    if (!t.data.allFinite()) throw SchemaError("feature tensor: non-finite entries");
}

// ---------------------------------------------------------------------------
// Preprocessing config
// ---------------------------------------------------------------------------

struct Preprocess {
    int resize_width = 64;
    int resize_height = 64;
    int grid_height = 4;
    int grid_width = 4;
};

inline std::string preprocess_digest(const Preprocess& p, const std::string& backbone_id) {
    const std::string canon = "resize=" + std::to_string(p.resize_width) + "x" +
                              std::to_string(p.resize_height) +
                              ";grid=" + std::to_string(p.grid_height) + "x" +
                              std::to_string(p.grid_width) + ";backbone=" + backbone_id;
    return hex64(fnv1a64(canon));
}

struct BackboneConfig {
    std::string backbone_id = "iqtk-lite-8";
    std::string weights_path;  // required for dnn backbones
    Preprocess preprocess;
};

inline constexpr const char* kBuiltinBackboneId = "iqtk-lite-8";
inline constexpr int kBuiltinChannels = 8;

// The built-in backbone has no learned weights; its fingerprint covers the
// channel definitions so the frozen-backbone check has something to compare.
inline std::string backbone_fingerprint(const BackboneConfig& cfg) {
    if (cfg.backbone_id == kBuiltinBackboneId) {
        return hex64(fnv1a64("iqtk-lite-8/v1:mean,std,lap,sobel,darkfrac,brightfrac,"
                             "contrast,edgefrac"));
    }
    std::ifstream in(cfg.weights_path, std::ios::binary | std::ios::ate);
    if (!in) throw ConfigError("backbone fingerprint: cannot open " + cfg.weights_path);
    const auto size = static_cast<std::uint64_t>(in.tellg());
    return hex64(fnv1a64(cfg.backbone_id + ":" + std::to_string(size)));
}

// ---------------------------------------------------------------------------
// Decode
// ---------------------------------------------------------------------------

inline cv::Mat decode_image_file(const std::string& path) {
    cv::Mat img = cv::imread(path, cv::IMREAD_COLOR);
    if (img.empty()) throw DecodeError("cannot decode image: " + path);
    return img;
}

// ---------------------------------------------------------------------------
// Built-in filter-bank backbone
// ---------------------------------------------------------------------------

namespace detail {

// gray in [0,1], float64, resized per config
inline cv::Mat to_gray_unit(const cv::Mat& bgr, const Preprocess& p) {
    if (bgr.empty()) throw DecodeError("empty image");
    cv::Mat gray;
    if (bgr.channels() == 3) {
        cv::cvtColor(bgr, gray, cv::COLOR_BGR2GRAY);
    } else {
        gray = bgr;
    }
    cv::Mat resized;
    cv::resize(gray, resized, {p.resize_width, p.resize_height}, 0, 0, cv::INTER_AREA);
    cv::Mat unit;
    resized.convertTo(unit, CV_64F, 1.0 / 255.0);
    return unit;
}

}  // namespace detail

// Per grid cell: mean, std, |Laplacian| mean, Sobel-magnitude mean, dark
// fraction (<0.2), bright fraction (>0.8), mean |v-0.5| contrast, and the
// fraction of pixels whose gradient magnitude exceeds 0.25.
inline FeatureTensor extract_builtin_features(const cv::Mat& bgr, const Preprocess& p) {
    const cv::Mat gray = detail::to_gray_unit(bgr, p);
    cv::Mat lap, dx, dy;
    cv::Laplacian(gray, lap, CV_64F, 3, 1.0, 0.0, cv::BORDER_REPLICATE);
    cv::Sobel(gray, dx, CV_64F, 1, 0, 3, 1.0, 0.0, cv::BORDER_REPLICATE);
    cv::Sobel(gray, dy, CV_64F, 0, 1, 3, 1.0, 0.0, cv::BORDER_REPLICATE);

    FeatureTensor t;
    t.kind = FeatureKind::grid;
    t.height = p.grid_height;
    t.width = p.grid_width;
    t.backbone_id = kBuiltinBackboneId;
    t.preprocessing_hash = preprocess_digest(p, kBuiltinBackboneId);
    t.data.resize(static_cast<Eigen::Index>(p.grid_height) * p.grid_width, kBuiltinChannels);

    const int cell_h = p.resize_height / p.grid_height;
    const int cell_w = p.resize_width / p.grid_width;
    if (cell_h < 1 || cell_w < 1) throw ConfigError("grid finer than the resized image");

    for (int gy = 0; gy < p.grid_height; ++gy) {
        for (int gx = 0; gx < p.grid_width; ++gx) {
            const int y0 = gy * cell_h, x0 = gx * cell_w;
            const int y1 = gy + 1 == p.grid_height ? gray.rows : y0 + cell_h;
            const int x1 = gx + 1 == p.grid_width ? gray.cols : x0 + cell_w;
            double sum = 0.0, sum2 = 0.0, lap_sum = 0.0, mag_sum = 0.0;
            double dark = 0.0, bright = 0.0, contrast = 0.0, edges = 0.0;
            const double n = static_cast<double>((y1 - y0) * (x1 - x0));
            for (int y = y0; y < y1; ++y) {
                for (int x = x0; x < x1; ++x) {
                    const double v = gray.at<double>(y, x);
                    sum += v;
                    sum2 += v * v;
                    lap_sum += std::abs(lap.at<double>(y, x));
                    const double mag = std::hypot(dx.at<double>(y, x), dy.at<double>(y, x));
                    mag_sum += mag;
                    dark += v < 0.2 ? 1.0 : 0.0;
                    bright += v > 0.8 ? 1.0 : 0.0;
                    contrast += std::abs(v - 0.5);
                    edges += mag > 0.25 ? 1.0 : 0.0;
                }
            }
            const double mean = sum / n;
            const double var = std::max(0.0, sum2 / n - mean * mean);
            const Eigen::Index row = static_cast<Eigen::Index>(gy) * p.grid_width + gx;
            t.data(row, 0) = mean;
            t.data(row, 1) = std::sqrt(var);
            t.data(row, 2) = lap_sum / n;
            t.data(row, 3) = mag_sum / n;
            t.data(row, 4) = dark / n;
            t.data(row, 5) = bright / n;
            t.data(row, 6) = contrast / n;
            t.data(row, 7) = edges / n;
        }
    }
    validate_tensor(t);
    return t;
}

// ---------------------------------------------------------------------------
// External dnn backbones
// ---------------------------------------------------------------------------

inline bool is_dnn_backbone(const std::string& id) {
    return id == "resnet152" || id == "xception";
}

// Runs the pretrained network and reshapes its (1, C, H, W) activation into a
// grid tensor. The weights file is the caller's responsibility; its absence
// is a configuration error, never a silent fallback.
inline FeatureTensor extract_dnn_features(const cv::Mat& bgr, const BackboneConfig& cfg) {
    if (cfg.weights_path.empty()) {
        throw ConfigError("backbone '" + cfg.backbone_id + "' needs a weights file");
    }
    {
        std::ifstream probe(cfg.weights_path, std::ios::binary);
        if (!probe) {
            throw ConfigError("backbone weights not found: " + cfg.weights_path);
        }
    }
    cv::dnn::Net net = cv::dnn::readNet(cfg.weights_path);
    if (net.empty()) throw ConfigError("cannot load network from " + cfg.weights_path);
    cv::Mat blob = cv::dnn::blobFromImage(bgr, 1.0 / 255.0, {224, 224},
                                          cv::Scalar(0.485, 0.456, 0.406) * 255.0, true, false);
    net.setInput(blob);
    cv::Mat out = net.forward();
    FeatureTensor t;
    t.kind = FeatureKind::grid;
    t.backbone_id = cfg.backbone_id;
    t.preprocessing_hash = preprocess_digest(cfg.preprocess, cfg.backbone_id);
    if (out.dims == 4) {
        const int c = out.size[1], h = out.size[2], w = out.size[3];
        t.height = h;
        t.width = w;
        t.data.resize(static_cast<Eigen::Index>(h) * w, c);
        for (int ch = 0; ch < c; ++ch) {
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    t.data(static_cast<Eigen::Index>(y) * w + x, ch) =
                        static_cast<double>(out.ptr<float>(0, ch, y)[x]);
                }
            }
        }
    } else {
        // fully collapsed activation: treat as a 1x1 grid
        const auto c = static_cast<int>(out.total());
        t.height = t.width = 1;
        t.data.resize(1, c);
        for (int ch = 0; ch < c; ++ch) {
            t.data(0, ch) = static_cast<double>(out.ptr<float>(0)[ch]);
        }
    }
    validate_tensor(t);
    return t;
}

inline FeatureTensor extract_grid_features(const cv::Mat& bgr, const BackboneConfig& cfg) {
    if (cfg.backbone_id == kBuiltinBackboneId) {
        return extract_builtin_features(bgr, cfg.preprocess);
    }
    if (is_dnn_backbone(cfg.backbone_id)) {
        return extract_dnn_features(bgr, cfg);
    }
    throw ConfigError("unknown backbone id '" + cfg.backbone_id + "'");
}

inline FeatureTensor extract_grid_features_file(const std::string& path,
                                                const BackboneConfig& cfg) {
    return extract_grid_features(decode_image_file(path), cfg);
}

// ---------------------------------------------------------------------------
// Binary feature container ("IQTKFEA1")
// ---------------------------------------------------------------------------
// magic[8] | kind u32 | H u32 | W u32 | K u32 | C u32 | K*C float32, row-major
// All integers and floats little-endian.

inline constexpr char kFeatureMagic[9] = "IQTKFEA1";

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

inline std::string serialize_features(const FeatureTensor& t) {
    validate_tensor(t);
    std::string out(kFeatureMagic, 8);
    detail::put_u32(out, t.kind == FeatureKind::grid ? 0u : 1u);
    detail::put_u32(out, static_cast<std::uint32_t>(t.height));
    detail::put_u32(out, static_cast<std::uint32_t>(t.width));
    detail::put_u32(out, static_cast<std::uint32_t>(t.data.rows()));
    detail::put_u32(out, static_cast<std::uint32_t>(t.data.cols()));
    for (Eigen::Index r = 0; r < t.data.rows(); ++r) {
        for (Eigen::Index c = 0; c < t.data.cols(); ++c) {
            detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(t.data(r, c))));
        }
    }
    return out;
}

inline FeatureTensor deserialize_features(const std::string& bytes,
                                          std::optional<int> expected_channels = std::nullopt) {
    if (bytes.size() < 28 || std::memcmp(bytes.data(), kFeatureMagic, 8) != 0) {
        throw SchemaError("feature file: bad magic or truncated header");
    }
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + 8;
    const std::uint32_t kind = detail::get_u32(p);
    const std::uint32_t h = detail::get_u32(p + 4);
    const std::uint32_t w = detail::get_u32(p + 8);
    const std::uint32_t k = detail::get_u32(p + 12);
    const std::uint32_t c = detail::get_u32(p + 16);
    if (kind > 1) throw SchemaError("feature file: unknown kind");
    if (k == 0 || c == 0) throw SchemaError("feature file: K and C must be >= 1");
    if (kind == 0 && static_cast<std::uint64_t>(h) * w != k) {
        throw SchemaError("feature file: grid K must equal H*W");
    }
    if (bytes.size() != 28 + static_cast<std::size_t>(k) * c * 4) {
        throw SchemaError("feature file: payload length mismatch");
    }
    if (expected_channels && static_cast<std::uint32_t>(*expected_channels) != c) {
        throw SchemaError("feature file: C=" + std::to_string(c) + " but config expects " +
                          std::to_string(*expected_channels));
    }
    FeatureTensor t;
    t.kind = kind == 0 ? FeatureKind::grid : FeatureKind::object;
    t.height = static_cast<int>(h);
    t.width = static_cast<int>(w);
    t.data.resize(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c));
    const unsigned char* q = p + 20;
    for (std::uint32_t r = 0; r < k; ++r) {
        for (std::uint32_t col = 0; col < c; ++col) {
            const float f = std::bit_cast<float>(detail::get_u32(q));
            q += 4;
            t.data(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(col)) =
                static_cast<double>(f);
        }
    }
    validate_tensor(t);
    return t;
}

inline void write_feature_file(const std::string& path, const FeatureTensor& t) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write feature file: " + path);
    const std::string bytes = serialize_features(t);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline FeatureTensor load_feature_file(const std::string& path,
                                       std::optional<int> expected_channels = std::nullopt) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open feature file: " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_features(bytes, expected_channels);
}

// Precomputed object-level features (no detector runs in-process).
inline FeatureTensor load_object_features(const std::string& path,
                                          std::optional<int> expected_channels = std::nullopt) {
    FeatureTensor t = load_feature_file(path, expected_channels);
    if (t.kind != FeatureKind::object) {
        throw SchemaError("object feature file holds a grid tensor: " + path);
    }
    return t;
}

// Cache key for (image, backbone, preprocessing) triples.
inline std::string feature_cache_key(const std::string& image_id,
                                     const std::string& backbone_id,
                                     const std::string& preprocessing_hash) {
    return hex64(fnv1a64(image_id + "|" + backbone_id + "|" + preprocessing_hash));
}

// ---------------------------------------------------------------------------
// Classical features
// ---------------------------------------------------------------------------

enum class ClassicKind { sift_stats, hog };

struct ClassicFeature {
    ClassicKind kind = ClassicKind::sift_stats;
    std::vector<double> vec;
};

inline constexpr int kSiftStatsDim = 8;
// 64x64 window, 16x16 blocks, 8x8 stride/cells, 9 bins -> 7*7 blocks * 4
// cells * 9 bins
inline constexpr int kHogDim = 1764;

// [count, per-kilopixel density, mean/std/max response, mean/std/max size];
// zeros when no keypoints fire.
inline ClassicFeature sift_stats(const cv::Mat& bgr) {
    if (bgr.empty()) throw DecodeError("sift_stats: empty image");
    cv::Mat gray;
    if (bgr.channels() == 3) {
        cv::cvtColor(bgr, gray, cv::COLOR_BGR2GRAY);
    } else {
        gray = bgr;
    }
    auto sift = cv::SIFT::create();
    std::vector<cv::KeyPoint> kps;
    sift->detect(gray, kps);
    ClassicFeature f;
    f.kind = ClassicKind::sift_stats;
    f.vec.assign(kSiftStatsDim, 0.0);
    const double n = static_cast<double>(kps.size());
    f.vec[0] = n;
    f.vec[1] = n * 1000.0 / (static_cast<double>(gray.rows) * gray.cols);
    if (!kps.empty()) {
        double r_sum = 0.0, r_sum2 = 0.0, r_max = 0.0;
        double s_sum = 0.0, s_sum2 = 0.0, s_max = 0.0;
        for (const auto& kp : kps) {
            r_sum += kp.response;
            r_sum2 += static_cast<double>(kp.response) * kp.response;
            r_max = std::max(r_max, static_cast<double>(kp.response));
            s_sum += kp.size;
            s_sum2 += static_cast<double>(kp.size) * kp.size;
            s_max = std::max(s_max, static_cast<double>(kp.size));
        }
        f.vec[2] = r_sum / n;
        f.vec[3] = std::sqrt(std::max(0.0, r_sum2 / n - (r_sum / n) * (r_sum / n)));
        f.vec[4] = r_max;
        f.vec[5] = s_sum / n;
        f.vec[6] = std::sqrt(std::max(0.0, s_sum2 / n - (s_sum / n) * (s_sum / n)));
        f.vec[7] = s_max;
    }
    return f;
}

inline ClassicFeature hog_features(const cv::Mat& bgr) {
    if (bgr.empty()) throw DecodeError("hog_features: empty image");
    cv::Mat gray;
    if (bgr.channels() == 3) {
        cv::cvtColor(bgr, gray, cv::COLOR_BGR2GRAY);
    } else {
        gray = bgr;
    }
    cv::Mat resized;
    cv::resize(gray, resized, {64, 64}, 0, 0, cv::INTER_AREA);
    cv::HOGDescriptor hog({64, 64}, {16, 16}, {8, 8}, {8, 8}, 9);
    std::vector<float> desc;
    hog.compute(resized, desc);
    ClassicFeature f;
    f.kind = ClassicKind::hog;
    f.vec.assign(desc.begin(), desc.end());
    if (static_cast<int>(f.vec.size()) != kHogDim) {
        throw SchemaError("hog: descriptor size " + std::to_string(f.vec.size()) +
                          " does not match declared " + std::to_string(kHogDim));
    }
    return f;
}

}  // namespace iqtk::features
