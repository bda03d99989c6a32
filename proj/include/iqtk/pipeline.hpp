#pragma once

// Pipeline orchestration: one declarative JSON config drives every
// subcommand, each subcommand is a pure function from (config, inputs on
// disk) to JSON artifacts under out_dir, and every artifact embeds the
// config hash and seed so reruns are auditable. Rerunning any step with the
// same config and seed writes byte-identical files.

#include <array>
#include <bit>
#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <opencv2/imgcodecs.hpp>

#include "iqtk/annotation_io.hpp"
#include "iqtk/curation.hpp"
#include "iqtk/error.hpp"
#include "iqtk/eval.hpp"
#include "iqtk/features.hpp"
#include "iqtk/flaws.hpp"
#include "iqtk/hashing.hpp"
#include "iqtk/labels.hpp"
#include "iqtk/plot.hpp"
#include "iqtk/recognizability.hpp"
#include "iqtk/serialize.hpp"
#include "iqtk/stats.hpp"
#include "iqtk/vqa.hpp"

namespace iqtk::pipeline {

using nlohmann::json;

inline constexpr const char* kToolkitVersion = "0.1.0";
// Optional feature cache: when set, grid features are memoized per
// (image, backbone, preprocessing) so retraining skips re-extraction.
inline constexpr const char* kFeatureCacheEnv = "IQTK_FEATURE_CACHE";

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

struct FilterSettings {
    curation::SelectionMode mode = curation::SelectionMode::perfect_flag;
    // 0 means "auto": for perfect_flag, keep exactly the recognizable subset.
    std::size_t n_keep = 0;
    std::string scores_path;  // predictions.jsonl for predicted_flag
};

struct PipelineConfig {
    std::string annotations_path;
    std::string questions_path;  // optional; required by train-vqa
    std::string out_dir = "out";
    std::uint64_t seed = 0;
    int redundancy = 5;
    int quorum = 2;
    double threshold = 0.5;
    features::BackboneConfig backbone;
    curation::SplitSpec split;  // seed is injected from the global seed
    curation::CostModel cost;
    recognizability::TrainConfig train_rec;
    recognizability::TrainConfig train_flaws;
    flaws::FlawHeadConfig flaw_head;
    vqa::ReasonConfig train_vqa;
    FilterSettings filter;
};

namespace detail {

// Distinct deterministic RNG streams per pipeline stage, all derived from
// the single user-facing seed.
inline std::uint64_t subseed(std::uint64_t seed, const std::string& stage) {
    return fnv1a64(hex64(seed) + ":" + stage);
}

inline void expect_keys(const json& j, const std::vector<std::string>& allowed,
                        const std::string& where) {
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const auto& a : allowed) {
            if (key == a) {
                ok = true;
                break;
            }
        }
        if (!ok) throw ConfigError("config: unknown key '" + key + "' in " + where);
    }
}

}  // namespace detail

// Propagates the global seed and threshold into every stage. Idempotent;
// call again after overriding either knob. Each stage gets its own derived
// RNG stream so the user still turns a single dial.
inline void finalize(PipelineConfig& c) {
    c.split.seed = detail::subseed(c.seed, "split");
    c.train_rec.seed = detail::subseed(c.seed, "rec");
    c.train_flaws.seed = detail::subseed(c.seed, "flaws");
    c.train_vqa.train.seed = detail::subseed(c.seed, "vqa");
    c.train_rec.threshold = c.threshold;
    c.train_flaws.threshold = c.threshold;
    c.train_vqa.train.threshold = c.threshold;
}

inline PipelineConfig default_config() {
    PipelineConfig c;
    c.split.ratios = {0.525, 0.375, 0.10};
    c.split.names = {"train", "val", "test"};
    c.train_rec.epochs = 40;
    c.train_rec.learning_rate = 0.01;
    c.train_flaws.epochs = 40;
    c.train_flaws.learning_rate = 0.01;
    c.train_vqa.train.epochs = 40;
    c.train_vqa.train.learning_rate = 0.01;
    finalize(c);
    return c;
}

inline json config_to_json(const PipelineConfig& c) {
    json j;
    j["annotations"] = c.annotations_path;
    j["questions"] = c.questions_path;
    j["out_dir"] = c.out_dir;
    j["seed"] = c.seed;
    j["redundancy"] = c.redundancy;
    j["quorum"] = c.quorum;
    j["threshold"] = c.threshold;
    j["backbone"] = {{"id", c.backbone.backbone_id},
                     {"weights", c.backbone.weights_path},
                     {"resize", {c.backbone.preprocess.resize_width,
                                 c.backbone.preprocess.resize_height}},
                     {"grid", {c.backbone.preprocess.grid_width,
                               c.backbone.preprocess.grid_height}}};
    j["split"] = {{"ratios", c.split.ratios},
                  {"names", c.split.names},
                  {"stratified", c.split.stratified}};
    j["cost"] = {{"per_image_rate", c.cost.per_image_rate},
                 {"per_image_seconds", c.cost.per_image_seconds}};
    auto train_block = [](const recognizability::TrainConfig& t) {
        return json{{"learning_rate", t.learning_rate},
                    {"epochs", t.epochs},
                    {"batch_size", t.batch_size},
                    {"hidden", t.hidden}};
    };
    j["train_rec"] = train_block(c.train_rec);
    j["train_flaws"] = train_block(c.train_flaws);
    j["train_flaws"]["hidden2"] = c.flaw_head.hidden2;
    j["train_vqa"] = {{"embed_dim", c.train_vqa.embed_dim},
                      {"gru_hidden", c.train_vqa.gru_hidden},
                      {"att_hidden", c.train_vqa.att_hidden},
                      {"fusion_dim", c.train_vqa.fusion_dim},
                      {"min_freq", c.train_vqa.min_freq},
                      {"variant", vqa::head_variant_name(c.train_vqa.variant)},
                      {"use_attention", c.train_vqa.use_attention},
                      {"learning_rate", c.train_vqa.train.learning_rate},
                      {"epochs", c.train_vqa.train.epochs},
                      {"batch_size", c.train_vqa.train.batch_size}};
    j["filter"] = {{"mode", curation::selection_mode_name(c.filter.mode)},
                   {"n_keep", c.filter.n_keep},
                   {"scores", c.filter.scores_path}};
    return j;
}

inline PipelineConfig config_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("config: top-level value must be a JSON object");
    detail::expect_keys(j,
                        {"annotations", "questions", "out_dir", "seed", "redundancy", "quorum",
                         "threshold", "backbone", "split", "cost", "train_rec", "train_flaws",
                         "train_vqa", "filter"},
                        "top level");
    PipelineConfig c = default_config();
    c.annotations_path = j.value("annotations", c.annotations_path);
    c.questions_path = j.value("questions", c.questions_path);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.seed = j.value("seed", c.seed);
    c.redundancy = j.value("redundancy", c.redundancy);
    c.quorum = j.value("quorum", c.quorum);
    c.threshold = j.value("threshold", c.threshold);
    if (j.contains("backbone")) {
        const json& b = j["backbone"];
        detail::expect_keys(b, {"id", "weights", "resize", "grid"}, "backbone");
        c.backbone.backbone_id = b.value("id", c.backbone.backbone_id);
        c.backbone.weights_path = b.value("weights", c.backbone.weights_path);
        if (b.contains("resize")) {
            c.backbone.preprocess.resize_width = b["resize"].at(0).get<int>();
            c.backbone.preprocess.resize_height = b["resize"].at(1).get<int>();
        }
        if (b.contains("grid")) {
            c.backbone.preprocess.grid_width = b["grid"].at(0).get<int>();
            c.backbone.preprocess.grid_height = b["grid"].at(1).get<int>();
        }
    }
    if (j.contains("split")) {
        const json& s = j["split"];
        detail::expect_keys(s, {"ratios", "names", "stratified"}, "split");
        if (s.contains("ratios")) c.split.ratios = s["ratios"].get<std::vector<double>>();
        if (s.contains("names")) c.split.names = s["names"].get<std::vector<std::string>>();
        c.split.stratified = s.value("stratified", c.split.stratified);
    }
    if (j.contains("cost")) {
        const json& k = j["cost"];
        detail::expect_keys(k, {"per_image_rate", "per_image_seconds"}, "cost");
        c.cost.per_image_rate = k.value("per_image_rate", c.cost.per_image_rate);
        c.cost.per_image_seconds = k.value("per_image_seconds", c.cost.per_image_seconds);
    }
    auto read_train = [](const json& t, recognizability::TrainConfig& out,
                         const std::string& where, bool allow_hidden2) {
        std::vector<std::string> keys = {"learning_rate", "epochs", "batch_size", "hidden"};
        if (allow_hidden2) keys.push_back("hidden2");
        detail::expect_keys(t, keys, where);
        out.learning_rate = t.value("learning_rate", out.learning_rate);
        out.epochs = t.value("epochs", out.epochs);
        out.batch_size = t.value("batch_size", out.batch_size);
        out.hidden = t.value("hidden", out.hidden);
    };
    if (j.contains("train_rec")) read_train(j["train_rec"], c.train_rec, "train_rec", false);
    if (j.contains("train_flaws")) {
        read_train(j["train_flaws"], c.train_flaws, "train_flaws", true);
        c.flaw_head.hidden1 = c.train_flaws.hidden;
        c.flaw_head.hidden2 = j["train_flaws"].value("hidden2", c.flaw_head.hidden2);
    }
    if (j.contains("train_vqa")) {
        const json& v = j["train_vqa"];
        detail::expect_keys(v,
                            {"embed_dim", "gru_hidden", "att_hidden", "fusion_dim", "min_freq",
                             "variant", "use_attention", "learning_rate", "epochs", "batch_size"},
                            "train_vqa");
        c.train_vqa.embed_dim = v.value("embed_dim", c.train_vqa.embed_dim);
        c.train_vqa.gru_hidden = v.value("gru_hidden", c.train_vqa.gru_hidden);
        c.train_vqa.att_hidden = v.value("att_hidden", c.train_vqa.att_hidden);
        c.train_vqa.fusion_dim = v.value("fusion_dim", c.train_vqa.fusion_dim);
        c.train_vqa.min_freq = v.value("min_freq", c.train_vqa.min_freq);
        if (v.contains("variant")) {
            c.train_vqa.variant = vqa::head_variant_from_name(v["variant"].get<std::string>());
        }
        c.train_vqa.use_attention = v.value("use_attention", c.train_vqa.use_attention);
        c.train_vqa.train.learning_rate =
            v.value("learning_rate", c.train_vqa.train.learning_rate);
        c.train_vqa.train.epochs = v.value("epochs", c.train_vqa.train.epochs);
        c.train_vqa.train.batch_size = v.value("batch_size", c.train_vqa.train.batch_size);
    }
    if (j.contains("filter")) {
        const json& f = j["filter"];
        detail::expect_keys(f, {"mode", "n_keep", "scores"}, "filter");
        if (f.contains("mode")) {
            const std::string m = f["mode"].get<std::string>();
            if (m == "full") c.filter.mode = curation::SelectionMode::full;
            else if (m == "predicted_flag") c.filter.mode = curation::SelectionMode::predicted_flag;
            else if (m == "perfect_flag") c.filter.mode = curation::SelectionMode::perfect_flag;
            else if (m == "random_sample") c.filter.mode = curation::SelectionMode::random_sample;
            else throw ConfigError("config: unknown filter mode '" + m + "'");
        }
        c.filter.n_keep = f.value("n_keep", c.filter.n_keep);
        c.filter.scores_path = f.value("scores", c.filter.scores_path);
    }
    finalize(c);
    return c;
}

inline PipelineConfig load_config(const std::string& path) {
    return config_from_json(ser::read_json_file(path));
}

// Hash of the canonical config dump; nlohmann objects iterate in sorted key
// order so this is stable across processes.
inline std::string config_hash(const PipelineConfig& c) { return digest(config_to_json(c).dump()); }

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

namespace detail {

inline std::string artifact_path(const PipelineConfig& cfg, const std::string& filename) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    return (fs::path(cfg.out_dir) / filename).string();
}

inline json envelope(const std::string& name, const PipelineConfig& cfg, json payload) {
    json j;
    j["artifact"] = name;
    j["config_hash"] = config_hash(cfg);
    j["seed"] = cfg.seed;
    j["toolkit_version"] = kToolkitVersion;
    j["payload"] = std::move(payload);
    return j;
}

inline std::string write_artifact(const PipelineConfig& cfg, const std::string& filename,
                                  const std::string& name, json payload) {
    const std::string path = artifact_path(cfg, filename);
    ser::write_json_file(path, envelope(name, cfg, std::move(payload)));
    return path;
}

inline std::string write_text_artifact(const PipelineConfig& cfg, const std::string& filename,
                                       const std::string& header_prefix,
                                       const std::string& body) {
    const std::string path = artifact_path(cfg, filename);
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("cannot write: " + path);
    out << header_prefix << " config_hash=" << config_hash(cfg) << " seed=" << cfg.seed << "\n"
        << body;
    return path;
}

// Reads back an artifact and returns its payload; tolerates bare documents
// so hand-built inputs also work.
inline json read_payload(const std::string& path) {
    json j = ser::read_json_file(path);
    if (j.is_object() && j.contains("artifact") && j.contains("payload")) return j["payload"];
    return j;
}

inline std::string format_dollars(double amount) {
    char raw[64];
    std::snprintf(raw, sizeof raw, "%.2f", amount);
    std::string digits(raw);
    const auto dot = digits.find('.');
    std::string whole = digits.substr(0, dot), frac = digits.substr(dot);
    std::string grouped;
    int count = 0;
    for (auto it = whole.rbegin(); it != whole.rend(); ++it) {
        if (count != 0 && count % 3 == 0 && *it != '-') grouped.insert(grouped.begin(), ',');
        grouped.insert(grouped.begin(), *it);
        ++count;
    }
    return "$" + grouped + frac;
}

inline std::string format_hours(double hours) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.1f h", hours);
    return buf;
}

// ---------------------------------------------------------------------------
// Input loading
// ---------------------------------------------------------------------------

inline std::vector<data::ImageRecord> load_records(const PipelineConfig& cfg) {
    if (cfg.annotations_path.empty()) {
        throw ConfigError("config: annotations path is not set");
    }
    if (!std::filesystem::exists(cfg.annotations_path)) {
        throw ConfigError("annotations file not found: " + cfg.annotations_path);
    }
    data::ParseOptions opt;
    opt.redundancy = cfg.redundancy;
    return data::parse_annotation_file(cfg.annotations_path, opt);
}

inline std::vector<data::AggregatedLabels> aggregate_records(
    const std::vector<data::ImageRecord>& records, int quorum) {
    std::vector<data::AggregatedLabels> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(data::aggregate(r, quorum));
    return out;
}

inline std::vector<data::QuestionEntry> load_questions(const PipelineConfig& cfg) {
    if (cfg.questions_path.empty()) {
        throw ConfigError("config: questions path is not set");
    }
    if (!std::filesystem::exists(cfg.questions_path)) {
        throw ConfigError("questions file not found: " + cfg.questions_path);
    }
    return data::read_question_file(cfg.questions_path);
}

// The private feature cache keeps exact doubles (unlike the float32
// interchange format) so toggling the cache can never change a trained bit.
inline constexpr char kCacheMagic[8] = {'I', 'Q', 'C', 'A', 'C', 'H', 'E', '1'};

inline void write_cache_file(const std::string& path, const features::FeatureTensor& t) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write feature cache file: " + path);
    out.write(kCacheMagic, 8);
    auto put64 = [&out](std::uint64_t v) {
        char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
        out.write(b, 8);
    };
    put64(t.kind == features::FeatureKind::grid ? 0u : 1u);
    put64(static_cast<std::uint64_t>(t.height));
    put64(static_cast<std::uint64_t>(t.width));
    put64(static_cast<std::uint64_t>(t.data.rows()));
    put64(static_cast<std::uint64_t>(t.data.cols()));
    for (Eigen::Index r = 0; r < t.data.rows(); ++r) {
        for (Eigen::Index c = 0; c < t.data.cols(); ++c) {
            put64(std::bit_cast<std::uint64_t>(t.data(r, c)));
        }
    }
    put64(fnv1a64(t.backbone_id + "|" + t.preprocessing_hash));
}

inline std::optional<features::FeatureTensor> read_cache_file(
    const std::string& path, const std::string& backbone_id,
    const std::string& preprocessing_hash) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    // A stale or truncated cache entry is a miss, not an error.
    if (bytes.size() < 56 || std::memcmp(bytes.data(), kCacheMagic, 8) != 0) return std::nullopt;
    auto get64 = [&bytes](std::size_t off) {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[off + static_cast<std::size_t>(i)]))
                 << (8 * i);
        }
        return v;
    };
    features::FeatureTensor t;
    t.kind = get64(8) == 0 ? features::FeatureKind::grid : features::FeatureKind::object;
    t.height = static_cast<int>(get64(16));
    t.width = static_cast<int>(get64(24));
    const auto rows = static_cast<Eigen::Index>(get64(32));
    const auto cols = static_cast<Eigen::Index>(get64(40));
    const std::size_t need = 56 + static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) * 8;
    if (rows <= 0 || cols <= 0 || bytes.size() != need) return std::nullopt;
    if (get64(need - 8) != fnv1a64(backbone_id + "|" + preprocessing_hash)) return std::nullopt;
    t.data.resize(rows, cols);
    std::size_t off = 48;
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            t.data(r, c) = std::bit_cast<double>(get64(off));
            off += 8;
        }
    }
    t.backbone_id = backbone_id;
    t.preprocessing_hash = preprocessing_hash;
    return t;
}

// Grid features for one record, with the optional on-disk cache.
inline features::FeatureTensor features_for(const PipelineConfig& cfg,
                                            const data::ImageRecord& r) {
    namespace fs = std::filesystem;
    const char* cache_dir = std::getenv(kFeatureCacheEnv);
    const std::string pre_hash =
        features::preprocess_digest(cfg.backbone.preprocess, cfg.backbone.backbone_id);
    std::string cache_file;
    if (cache_dir != nullptr && *cache_dir != '\0') {
        const std::string key =
            features::feature_cache_key(r.image_id, cfg.backbone.backbone_id, pre_hash);
        fs::create_directories(cache_dir);
        cache_file = (fs::path(cache_dir) / (key + ".iqcache")).string();
        if (auto cached = read_cache_file(cache_file, cfg.backbone.backbone_id, pre_hash)) {
            return *cached;
        }
    }
    fs::path img_path(r.uri);
    if (img_path.is_relative()) {
        img_path = fs::path(cfg.annotations_path).parent_path() / img_path;
    }
    cv::Mat img = cv::imread(img_path.string(), cv::IMREAD_COLOR);
    if (img.empty()) throw ConfigError("cannot read image: " + img_path.string());
    features::FeatureTensor t = features::extract_grid_features(img, cfg.backbone);
    if (!cache_file.empty()) write_cache_file(cache_file, t);
    return t;
}

struct FeatureSet {
    std::vector<features::FeatureTensor> tensors;          // parallel to records
    std::unordered_map<std::string, std::size_t> by_id;    // image_id -> index
};

inline FeatureSet load_features(const PipelineConfig& cfg,
                                const std::vector<data::ImageRecord>& records) {
    FeatureSet fs;
    fs.tensors.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        fs.tensors.push_back(features_for(cfg, records[i]));
        fs.by_id.emplace(records[i].image_id, i);
    }
    return fs;
}

inline json split_summary(const PipelineConfig& cfg, std::size_t n) {
    const auto idx = curation::split_indices(n, cfg.split);
    json j = json::object();
    for (std::size_t s = 0; s < idx.size(); ++s) {
        j[cfg.split.names[s]] = idx[s].size();
    }
    return j;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Subcommands. Each returns the artifact paths it wrote.
// ---------------------------------------------------------------------------

inline std::vector<std::string> run_ingest(const PipelineConfig& cfg) {
    const auto records = detail::load_records(cfg);
    json rows = json::array();
    for (const auto& r : records) rows.push_back(data::record_to_json(r));
    json payload;
    payload["n_records"] = records.size();
    payload["redundancy"] = cfg.redundancy;
    payload["records"] = std::move(rows);
    return {detail::write_artifact(cfg, "records.json", "records", std::move(payload))};
}

inline std::vector<std::string> run_aggregate(const PipelineConfig& cfg) {
    const auto records = detail::load_records(cfg);
    const auto labels = detail::aggregate_records(records, cfg.quorum);
    json rows = json::array();
    std::int64_t n_unrec = 0;
    for (const auto& l : labels) {
        rows.push_back(data::aggregated_to_json(l));
        if (l.unrecognizable) ++n_unrec;
    }
    json payload;
    payload["quorum"] = cfg.quorum;
    payload["n_images"] = labels.size();
    payload["n_unrecognizable"] = n_unrec;
    payload["labels"] = std::move(rows);
    return {detail::write_artifact(cfg, "aggregated.json", "aggregated_labels",
                                   std::move(payload))};
}

inline std::vector<std::string> run_stats(const PipelineConfig& cfg) {
    const auto records = detail::load_records(cfg);
    const auto labels = detail::aggregate_records(records, cfg.quorum);
    std::vector<data::VisualQuestion> questions;
    const bool with_questions =
        !cfg.questions_path.empty() && std::filesystem::exists(cfg.questions_path);
    if (with_questions) {
        questions = data::build_visual_questions(detail::load_questions(cfg), labels);
    }
    const stats::StatsReport report =
        stats::compute_stats_report(labels, with_questions ? &questions : nullptr);

    std::vector<std::string> out;
    out.push_back(detail::write_artifact(cfg, "stats.json", "stats_report",
                                         stats::stats_report_to_json(report)));
    out.push_back(detail::write_text_artifact(cfg, "interrelation.csv", "#",
                                              stats::interrelation_matrix_csv(report.interrelation)));
    const std::string prev_png = detail::artifact_path(cfg, "prevalence.png");
    plot::save_png(plot::prevalence_chart(report.prevalence, report.prevalence_unrecognizable),
                   prev_png);
    out.push_back(prev_png);
    const std::string heat_png = detail::artifact_path(cfg, "interrelation.png");
    plot::save_png(plot::interrelation_heatmap(report.interrelation), heat_png);
    out.push_back(heat_png);
    return out;
}

// predictions.jsonl rows for recognizability checkpoints; reused by filter
// (predicted_flag), evaluate, and overlap.
namespace detail {

struct ScoredRow {
    std::string image_id;
    double p = 0.0;
};

inline std::vector<ScoredRow> read_score_rows(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open predictions file: " + path);
    std::vector<ScoredRow> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(path + ": " + e.what());
        }
        if (j.contains("artifact")) continue;  // header line
        if (!j.contains("p_unrecognizable")) {
            throw SchemaError("predictions row lacks p_unrecognizable: " + line);
        }
        ScoredRow r;
        r.image_id = j.at("image_id").get<std::string>();
        r.p = j.at("p_unrecognizable").get<double>();
        rows.push_back(std::move(r));
    }
    if (rows.empty()) throw SchemaError("predictions file holds no score rows: " + path);
    return rows;
}

}  // namespace detail

inline std::vector<std::string> run_filter(const PipelineConfig& cfg) {
    const auto records = detail::load_records(cfg);
    const auto labels = detail::aggregate_records(records, cfg.quorum);
    std::vector<std::string> ids;
    ids.reserve(labels.size());
    std::size_t n_recognizable = 0;
    for (const auto& l : labels) {
        ids.push_back(l.image_id);
        if (!l.unrecognizable) ++n_recognizable;
    }

    curation::TrainingManifest manifest;
    switch (cfg.filter.mode) {
        case curation::SelectionMode::full:
            manifest = curation::full_manifest(ids);
            break;
        case curation::SelectionMode::perfect_flag: {
            const std::size_t keep = cfg.filter.n_keep == 0 ? n_recognizable : cfg.filter.n_keep;
            manifest = curation::perfect_flag(labels, keep);
            break;
        }
        case curation::SelectionMode::random_sample: {
            if (cfg.filter.n_keep == 0) {
                throw ConfigError("filter: random_sample needs a nonzero n_keep");
            }
            manifest = curation::random_sample(ids, cfg.filter.n_keep,
                                               detail::subseed(cfg.seed, "filter"));
            break;
        }
        case curation::SelectionMode::predicted_flag: {
            if (cfg.filter.scores_path.empty()) {
                throw ConfigError("filter: predicted_flag needs a predictions file");
            }
            const auto rows = detail::read_score_rows(cfg.filter.scores_path);
            std::vector<std::string> row_ids;
            std::vector<double> ps;
            for (const auto& r : rows) {
                row_ids.push_back(r.image_id);
                ps.push_back(r.p);
            }
            std::ifstream scores(cfg.filter.scores_path, std::ios::binary);
            const std::string bytes((std::istreambuf_iterator<char>(scores)),
                                    std::istreambuf_iterator<char>());
            manifest = curation::filter_predicted(row_ids, ps, cfg.threshold,
                                                  "predictions:" + digest(bytes));
            break;
        }
    }

    json payload = curation::manifest_to_json(manifest);
    payload["n_selected"] = manifest.image_ids.size();
    payload["n_total"] = labels.size();
    return {detail::write_artifact(cfg, "manifest.json", "training_manifest",
                                   std::move(payload))};
}

inline std::vector<std::string> run_cost(const PipelineConfig& cfg,
                                         std::optional<std::int64_t> n_override = std::nullopt) {
    std::int64_t n = 0;
    if (n_override.has_value()) {
        n = *n_override;
    } else {
        for (const auto& l :
             detail::aggregate_records(detail::load_records(cfg), cfg.quorum)) {
            if (l.unrecognizable) ++n;
        }
    }
    curation::CostModel model = cfg.cost;
    model.redundancy = cfg.redundancy;
    const curation::CostSavings s = curation::cost_savings(n, model);
    json payload;
    payload["n_unrecognizable"] = n;
    payload["redundancy"] = model.redundancy;
    payload["per_image_rate"] = model.per_image_rate;
    payload["per_image_seconds"] = model.per_image_seconds;
    payload["dollars"] = s.dollars;
    payload["hours"] = s.hours;
    payload["dollars_text"] = detail::format_dollars(s.dollars);
    payload["hours_text"] = detail::format_hours(s.hours);
    return {detail::write_artifact(cfg, "cost.json", "cost_savings", std::move(payload))};
}

// ---------------------------------------------------------------------------
// Training subcommands
// ---------------------------------------------------------------------------

namespace detail {

inline json epoch_logs_to_json(const std::vector<recognizability::EpochLog>& logs) {
    json rows = json::array();
    for (const auto& e : logs) {
        rows.push_back({{"epoch", e.epoch}, {"loss", e.loss}, {"train_ap", e.train_ap}});
    }
    return rows;
}

inline json flaw_logs_to_json(const std::vector<flaws::FlawEpochLog>& logs) {
    json rows = json::array();
    for (const auto& e : logs) {
        json r{{"epoch", e.epoch}, {"loss", e.loss}};
        json per = json::object();
        for (int ch = 0; ch < data::kFlawChannelCount; ++ch) {
            const auto& f1 = e.f1[static_cast<std::size_t>(ch)];
            if (f1.has_value()) per[data::kFlawCodes[static_cast<std::size_t>(ch)]] = *f1;
        }
        if (!per.empty()) r["f1"] = std::move(per);
        rows.push_back(std::move(r));
    }
    return rows;
}

// train/val/test row indices for a record list, train slot first
inline std::vector<std::vector<std::size_t>> record_splits(const PipelineConfig& cfg,
                                                           std::size_t n) {
    return curation::split_indices(n, cfg.split);
}

}  // namespace detail

inline std::vector<std::string> run_train_rec(const PipelineConfig& cfg) {
    const auto records = detail::load_records(cfg);
    const auto labels = detail::aggregate_records(records, cfg.quorum);
    const auto feats = detail::load_features(cfg, records);
    const auto splits = detail::record_splits(cfg, records.size());

    std::vector<features::FeatureTensor> x;
    std::vector<bool> y;
    for (std::size_t i : splits[0]) {
        x.push_back(feats.tensors[i]);
        y.push_back(labels[i].unrecognizable);
    }
    const auto result = recognizability::train(x, y, cfg.train_rec);

    std::vector<std::string> out;
    out.push_back(detail::write_artifact(
        cfg, "rec_head.json", "recognizability_checkpoint",
        recognizability::head_to_json(result.head, cfg.train_rec)));
    json log;
    log["steps"] = result.steps;
    log["epochs"] = detail::epoch_logs_to_json(result.log);
    log["splits"] = detail::split_summary(cfg, records.size());
    out.push_back(detail::write_artifact(cfg, "rec_train_log.json", "train_log",
                                         std::move(log)));
    return out;
}

inline std::vector<std::string> run_train_flaws(const PipelineConfig& cfg) {
    const auto records = detail::load_records(cfg);
    const auto labels = detail::aggregate_records(records, cfg.quorum);
    const auto feats = detail::load_features(cfg, records);
    const auto splits = detail::record_splits(cfg, records.size());

    std::vector<features::FeatureTensor> x;
    std::vector<data::FlawLabelSet> y;
    for (std::size_t i : splits[0]) {
        x.push_back(feats.tensors[i]);
        y.push_back(labels[i].flaws);
    }
    const auto result = flaws::train(x, y, cfg.train_flaws, cfg.flaw_head);

    std::vector<std::string> out;
    out.push_back(detail::write_artifact(cfg, "flaw_head.json", "flaw_checkpoint",
                                         flaws::head_to_json(result.head, cfg.train_flaws)));
    json log;
    log["steps"] = result.steps;
    log["epochs"] = detail::flaw_logs_to_json(result.log);
    log["splits"] = detail::split_summary(cfg, records.size());
    json trainable = json::object();
    for (int ch = 0; ch < data::kFlawChannelCount; ++ch) {
        trainable[data::kFlawCodes[static_cast<std::size_t>(ch)]] =
            result.trainable[static_cast<std::size_t>(ch)];
    }
    log["trainable"] = std::move(trainable);
    out.push_back(detail::write_artifact(cfg, "flaw_train_log.json", "train_log",
                                         std::move(log)));
    return out;
}

inline std::vector<std::string> run_train_vqa(const PipelineConfig& cfg) {
    const auto records = detail::load_records(cfg);
    const auto labels = detail::aggregate_records(records, cfg.quorum);
    const auto questions =
        data::build_visual_questions(detail::load_questions(cfg), labels);
    const auto feats = detail::load_features(cfg, records);

    std::vector<vqa::ReasonExample> examples;
    examples.reserve(questions.size());
    std::vector<std::string> missing;
    for (const auto& q : questions) {
        auto it = feats.by_id.find(q.image_id);
        if (it == feats.by_id.end()) {
            missing.push_back(q.image_id);
            continue;
        }
        vqa::ReasonExample ex;
        ex.image_id = q.image_id;
        ex.question = q.question;
        ex.features = feats.tensors[it->second];
        ex.answerable = q.answerable;
        ex.unrecognizable = q.unrecognizable;
        examples.push_back(std::move(ex));
    }
    if (!missing.empty()) {
        throw JoinError("train-vqa: questions reference unknown image ids", missing);
    }

    const auto splits = detail::record_splits(cfg, examples.size());
    std::vector<vqa::ReasonExample> train_split;
    for (std::size_t i : splits[0]) train_split.push_back(examples[i]);

    const auto result = vqa::train_reason(train_split, cfg.train_vqa);

    std::vector<std::string> out;
    out.push_back(detail::write_artifact(cfg, "reason_model.json", "reason_checkpoint",
                                         vqa::model_to_json(result.model, cfg.train_vqa)));
    json log;
    log["steps"] = result.steps;
    json rows = json::array();
    for (const auto& e : result.log) {
        rows.push_back({{"epoch", e.epoch}, {"loss", e.loss}, {"accuracy", e.accuracy}});
    }
    log["epochs"] = std::move(rows);
    log["splits"] = detail::split_summary(cfg, examples.size());
    log["variant"] = vqa::head_variant_name(cfg.train_vqa.variant);
    out.push_back(detail::write_artifact(cfg, "vqa_train_log.json", "train_log",
                                         std::move(log)));
    return out;
}

// ---------------------------------------------------------------------------
// Prediction and evaluation
// ---------------------------------------------------------------------------

inline std::vector<std::string> run_predict(const PipelineConfig& cfg,
                                            const std::string& model_path) {
    if (!std::filesystem::exists(model_path)) {
        throw ConfigError("checkpoint not found: " + model_path);
    }
    const json doc = detail::read_payload(model_path);
    const std::string kind = doc.value("kind", std::string());

    const auto records = detail::load_records(cfg);
    std::vector<json> rows;

    if (kind == "recognizability_head") {
        const auto head = recognizability::head_from_json(doc);
        for (const auto& r : records) {
            const auto t = detail::features_for(cfg, r);
            const double p = recognizability::forward(head, t);
            rows.push_back({{"image_id", r.image_id},
                            {"kind", "recognizability"},
                            {"p_unrecognizable", p},
                            {"flagged", p >= cfg.threshold}});
        }
    } else if (kind == "flaw_head") {
        const auto head = flaws::head_from_json(doc);
        for (const auto& r : records) {
            const auto t = detail::features_for(cfg, r);
            const auto pred = flaws::predict(head, t, cfg.threshold);
            json probs = json::object(), labels = json::object();
            for (int ch = 0; ch < data::kFlawChannelCount; ++ch) {
                const auto code = data::kFlawCodes[static_cast<std::size_t>(ch)];
                probs[code] = pred.probabilities.values[static_cast<std::size_t>(ch)];
                labels[code] = pred.labels[static_cast<data::FlawChannel>(ch)];
            }
            rows.push_back({{"image_id", r.image_id},
                            {"kind", "flaws"},
                            {"probabilities", std::move(probs)},
                            {"labels", std::move(labels)}});
        }
    } else if (kind == "reason_model") {
        const auto model = vqa::model_from_json(doc);
        const auto entries = detail::load_questions(cfg);
        std::unordered_map<std::string, const data::ImageRecord*> by_id;
        for (const auto& r : records) by_id.emplace(r.image_id, &r);
        std::vector<std::string> missing;
        for (const auto& q : entries) {
            auto it = by_id.find(q.image_id);
            if (it == by_id.end()) {
                missing.push_back(q.image_id);
                continue;
            }
            const auto t = detail::features_for(cfg, *it->second);
            vqa::ReasonPrediction p = vqa::predict_reason(model, q.question, t);
            p.image_id = q.image_id;
            json row = vqa::prediction_to_json(p);
            row["kind"] = "reason";
            rows.push_back(std::move(row));
        }
        if (!missing.empty()) {
            throw JoinError("predict: questions reference unknown image ids", missing);
        }
    } else {
        throw SchemaError("checkpoint: unknown kind '" + kind + "' in " + model_path);
    }

    const std::string path = detail::artifact_path(cfg, "predictions.jsonl");
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("cannot write: " + path);
    json header{{"artifact", "predictions"},
                {"config_hash", config_hash(cfg)},
                {"seed", cfg.seed},
                {"toolkit_version", kToolkitVersion},
                {"model_kind", kind},
                {"n_rows", rows.size()}};
    out << header.dump() << "\n";
    for (const auto& r : rows) out << r.dump() << "\n";
    return {path};
}

namespace detail {

// Joins score rows against aggregated truth; throws JoinError on ids with no
// label partner.
inline void join_scores(const PipelineConfig& cfg, const std::string& predictions_path,
                        std::vector<double>& scores, std::vector<bool>& truth) {
    const auto rows = read_score_rows(predictions_path);
    const auto labels = aggregate_records(load_records(cfg), cfg.quorum);
    std::unordered_map<std::string, bool> unrec;
    for (const auto& l : labels) unrec.emplace(l.image_id, l.unrecognizable);
    std::vector<std::string> missing;
    for (const auto& r : rows) {
        auto it = unrec.find(r.image_id);
        if (it == unrec.end()) {
            missing.push_back(r.image_id);
            continue;
        }
        scores.push_back(r.p);
        truth.push_back(it->second);
    }
    if (!missing.empty()) {
        throw JoinError("evaluate: predictions reference unknown image ids", missing);
    }
}

}  // namespace detail

inline std::vector<std::string> run_evaluate(const PipelineConfig& cfg,
                                             const std::string& predictions_path) {
    std::vector<double> scores;
    std::vector<bool> truth;
    detail::join_scores(cfg, predictions_path, scores, truth);
    const eval::EvalReport report = eval::evaluate_scores(scores, truth, cfg.threshold);

    std::vector<std::string> out;
    out.push_back(detail::write_artifact(cfg, "eval.json", "eval_report",
                                         eval::eval_report_to_json(report)));
    out.push_back(detail::write_text_artifact(cfg, "pr_curve.csv", "#",
                                              eval::pr_curve_csv(report.pr_points)));
    const std::string png = detail::artifact_path(cfg, "pr_curve.png");
    plot::save_png(plot::pr_curve_chart(report.pr_points), png);
    out.push_back(png);
    return out;
}

inline std::vector<std::string> run_overlap(const PipelineConfig& cfg,
                                            const std::string& predictions_path) {
    std::vector<double> scores;
    std::vector<bool> truth;
    detail::join_scores(cfg, predictions_path, scores, truth);
    std::vector<double> pos, neg;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        (truth[i] ? pos : neg).push_back(scores[i]);
    }
    const eval::OverlapResult r = eval::distribution_overlap(pos, neg);

    auto hist_json = [](const eval::Histogram& h) {
        return json{{"lo", h.lo}, {"hi", h.hi}, {"counts", h.counts}};
    };
    json payload;
    payload["coefficient"] = r.coefficient;
    payload["n_unrecognizable"] = pos.size();
    payload["n_recognizable"] = neg.size();
    payload["hist_unrecognizable"] = hist_json(r.hist_a);
    payload["hist_recognizable"] = hist_json(r.hist_b);

    std::vector<std::string> out;
    out.push_back(detail::write_artifact(cfg, "overlap.json", "overlap_report",
                                         std::move(payload)));
    const std::string png = detail::artifact_path(cfg, "overlap.png");
    plot::save_png(plot::histogram_pair_chart(r.hist_a, r.hist_b, "unrecognizable",
                                              "recognizable"),
                   png);
    out.push_back(png);
    return out;
}

// ---------------------------------------------------------------------------
// Report: one bundled human-readable summary over the core artifacts.
// ---------------------------------------------------------------------------

inline std::vector<std::string> run_report(const PipelineConfig& cfg) {
    const auto records = detail::load_records(cfg);
    const auto labels = detail::aggregate_records(records, cfg.quorum);
    std::vector<data::VisualQuestion> questions;
    const bool with_questions =
        !cfg.questions_path.empty() && std::filesystem::exists(cfg.questions_path);
    if (with_questions) {
        questions = data::build_visual_questions(detail::load_questions(cfg), labels);
    }
    const stats::StatsReport report =
        stats::compute_stats_report(labels, with_questions ? &questions : nullptr);

    std::int64_t n_unrec = 0;
    for (const auto& l : labels) {
        if (l.unrecognizable) ++n_unrec;
    }
    curation::CostModel model = cfg.cost;
    model.redundancy = cfg.redundancy;
    const curation::CostSavings s = curation::cost_savings(n_unrec, model);

    json payload;
    payload["stats"] = stats::stats_report_to_json(report);
    payload["cost"] = {{"n_unrecognizable", n_unrec},
                       {"dollars", s.dollars},
                       {"hours", s.hours},
                       {"dollars_text", detail::format_dollars(s.dollars)},
                       {"hours_text", detail::format_hours(s.hours)}};
    payload["splits"] = detail::split_summary(cfg, records.size());

    std::vector<std::string> out;
    out.push_back(detail::write_artifact(cfg, "report.json", "summary_report", payload));

    std::ostringstream text;
    text << stats::stats_report_text(report) << "\n"
         << "Cost of unusable submissions (n=" << n_unrec << ", redundancy "
         << model.redundancy << "): " << detail::format_dollars(s.dollars) << ", "
         << detail::format_hours(s.hours) << "\n";
    out.push_back(detail::write_text_artifact(cfg, "report.txt", "#", text.str()));
    return out;
}

}  // namespace iqtk::pipeline
