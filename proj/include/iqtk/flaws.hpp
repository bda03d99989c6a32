#pragma once

// Multi-label quality-flaw classifier: backbone features through three FC
// layers into eight independent sigmoid outputs, aligned to the canonical
// flaw-channel order. NON is an ordinary channel, not derived from the rest.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "iqtk/error.hpp"
#include "iqtk/eval.hpp"
#include "iqtk/features.hpp"
#include "iqtk/labels.hpp"
#include "iqtk/nn.hpp"
#include "iqtk/recognizability.hpp"
#include "iqtk/rng.hpp"
#include "iqtk/serialize.hpp"

namespace iqtk::flaws {

using data::FlawLabelSet;
using data::FlawProbabilities;
using data::kFlawChannelCount;
using features::FeatureTensor;
using nn::Mat;
using recognizability::TrainConfig;
using recognizability::validate_train_config;
using json = nlohmann::json;

struct FlawHead {
    Mat w1, b1, w2, b2, w3, b3;  // (C,H1) (1,H1) (H1,H2) (1,H2) (H2,8) (1,8)
    std::string backbone_id;
    std::string preprocessing_hash;

    Eigen::Index in_channels() const { return w1.rows(); }
    std::int64_t parameter_count() const {
        return static_cast<std::int64_t>(w1.size()) + b1.size() + w2.size() + b2.size() +
               w3.size() + b3.size();
    }
};

struct FlawHeadConfig {
    int hidden1 = 512;
    int hidden2 = 256;
};

inline FlawHead init_head(Eigen::Index in_channels, const FlawHeadConfig& hc, Rng& rng) {
    if (hc.hidden1 < 1 || hc.hidden2 < 1) {
        throw InvalidSpecError("flaw head: hidden widths must be >= 1");
    }
    FlawHead h;
    h.w1 = nn::init::glorot(rng, in_channels, hc.hidden1);
    h.b1 = nn::init::zeros(1, hc.hidden1);
    h.w2 = nn::init::glorot(rng, hc.hidden1, hc.hidden2);
    h.b2 = nn::init::zeros(1, hc.hidden2);
    h.w3 = nn::init::glorot(rng, hc.hidden2, kFlawChannelCount);
    h.b3 = nn::init::zeros(1, kFlawChannelCount);
    return h;
}

inline Mat logits_batch(const FlawHead& head, const Mat& pooled_rows) {
    if (pooled_rows.cols() != head.in_channels()) {
        throw DimensionError("flaws forward: feature channels " +
                             std::to_string(pooled_rows.cols()) + " != head input " +
                             std::to_string(head.in_channels()));
    }
    const Mat h1 = ((pooled_rows * head.w1).rowwise() + head.b1.row(0)).cwiseMax(0.0);
    const Mat h2 = ((h1 * head.w2).rowwise() + head.b2.row(0)).cwiseMax(0.0);
    return (h2 * head.w3).rowwise() + head.b3.row(0);
}

inline FlawProbabilities forward(const FlawHead& head, const FeatureTensor& t) {
    const Mat logits = logits_batch(head, recognizability::global_pool(t));
    FlawProbabilities p;
    for (int ch = 0; ch < kFlawChannelCount; ++ch) {
        p.values[static_cast<std::size_t>(ch)] = nn::Tape::stable_sigmoid(logits(0, ch));
    }
    return p;
}

struct FlawPrediction {
    FlawProbabilities probabilities;
    FlawLabelSet labels;  // thresholded
};

inline FlawPrediction predict(const FlawHead& head, const FeatureTensor& t,
                              double threshold = 0.5) {
    FlawPrediction out;
    out.probabilities = forward(head, t);
    out.labels = out.probabilities.thresholded(threshold);
    return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct FlawEpochLog {
    int epoch = 0;
    double loss = 0.0;  // summed per-channel BCE, averaged over steps
    std::array<std::optional<double>, kFlawChannelCount> precision, recall, f1;
};

struct FlawTrainResult {
    FlawHead head;
    std::vector<FlawEpochLog> log;
    std::array<bool, kFlawChannelCount> trainable{};  // channel has >=1 positive
    int steps = 0;
};

struct FlawDivergenceError : DivergenceError {
    FlawHead last_good;
    FlawDivergenceError(const std::string& msg, FlawHead h)
        : DivergenceError(msg), last_good(std::move(h)) {}
};

inline FlawTrainResult train(const std::vector<FeatureTensor>& feats,
                             const std::vector<FlawLabelSet>& labels,
                             const TrainConfig& cfg = {}, const FlawHeadConfig& hc = {}) {
    validate_train_config(cfg);
    if (feats.size() != labels.size()) {
        throw DimensionError("flaws train: features/labels size mismatch");
    }
    if (feats.empty()) throw DegenerateTrainingError("flaws train: empty split");

    const auto n = static_cast<Eigen::Index>(feats.size());
    const Eigen::Index c = feats[0].channels();
    Mat x(n, c);
    Mat y(n, kFlawChannelCount);
    FlawTrainResult res;
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& t = feats[static_cast<std::size_t>(i)];
        if (t.channels() != c) {
            throw DimensionError("flaws train: inconsistent feature channels");
        }
        x.row(i) = recognizability::global_pool(t);
        for (int ch = 0; ch < kFlawChannelCount; ++ch) {
            const bool v = labels[static_cast<std::size_t>(i)].values[static_cast<std::size_t>(ch)];
            y(i, ch) = v ? 1.0 : 0.0;
            if (v) res.trainable[static_cast<std::size_t>(ch)] = true;
        }
    }

    Rng rng(cfg.seed);
    res.head = init_head(c, hc, rng);
    res.head.backbone_id = feats[0].backbone_id;
    res.head.preprocessing_hash = feats[0].preprocessing_hash;
    FlawHead last_good = res.head;

    nn::Adam opt(cfg.learning_rate);
    std::vector<std::size_t> order(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        int steps_this_epoch = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            const auto bsz = static_cast<Eigen::Index>(stop - start);
            Mat bx(bsz, c), by(bsz, kFlawChannelCount);
            for (Eigen::Index k = 0; k < bsz; ++k) {
                const auto src = static_cast<Eigen::Index>(order[start + static_cast<std::size_t>(k)]);
                bx.row(k) = x.row(src);
                by.row(k) = y.row(src);
            }
            nn::Tape tape;
            const auto vw1 = tape.input(res.head.w1);
            const auto vb1 = tape.input(res.head.b1);
            const auto vw2 = tape.input(res.head.w2);
            const auto vb2 = tape.input(res.head.b2);
            const auto vw3 = tape.input(res.head.w3);
            const auto vb3 = tape.input(res.head.b3);
            const auto h1 = tape.relu(tape.add_rowvec(tape.matmul(tape.input(bx), vw1), vb1));
            const auto h2 = tape.relu(tape.add_rowvec(tape.matmul(h1, vw2), vb2));
            const auto logits = tape.add_rowvec(tape.matmul(h2, vw3), vb3);
            // mean-per-element BCE scaled back up to a per-channel sum
            const auto loss = tape.scale(tape.bce_with_logits(logits, by),
                                         static_cast<double>(kFlawChannelCount));
            const double loss_value = tape.value(loss)(0, 0);
            if (!std::isfinite(loss_value)) {
                throw FlawDivergenceError("flaws train: non-finite loss at epoch " +
                                              std::to_string(epoch),
                                          last_good);
            }
            last_good = res.head;
            tape.backward(loss);
            const Mat g1 = tape.grad(vw1), g2 = tape.grad(vb1), g3 = tape.grad(vw2),
                      g4 = tape.grad(vb2), g5 = tape.grad(vw3), g6 = tape.grad(vb3);
            opt.step({&res.head.w1, &res.head.b1, &res.head.w2, &res.head.b2, &res.head.w3,
                      &res.head.b3},
                     {&g1, &g2, &g3, &g4, &g5, &g6});
            loss_sum += loss_value;
            ++steps_this_epoch;
            ++res.steps;
        }
        FlawEpochLog el;
        el.epoch = epoch;
        el.loss = loss_sum / std::max(1, steps_this_epoch);
        // per-channel threshold metrics over the training split
        const Mat all_logits = logits_batch(res.head, x);
        for (int ch = 0; ch < kFlawChannelCount; ++ch) {
            std::vector<double> scores(static_cast<std::size_t>(n));
            std::vector<bool> truth(static_cast<std::size_t>(n));
            for (Eigen::Index i = 0; i < n; ++i) {
                scores[static_cast<std::size_t>(i)] =
                    nn::Tape::stable_sigmoid(all_logits(i, ch));
                truth[static_cast<std::size_t>(i)] = y(i, ch) > 0.5;
            }
            const auto prf = eval::prf_at_threshold(scores, truth, cfg.threshold);
            const auto k = static_cast<std::size_t>(ch);
            el.precision[k] = prf.precision;
            el.recall[k] = prf.recall;
            el.f1[k] = prf.f1;
        }
        res.log.push_back(el);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Random baseline: iid Bernoulli per channel at training prevalence
// ---------------------------------------------------------------------------

inline std::array<double, kFlawChannelCount> training_prevalence(
    const std::vector<FlawLabelSet>& labels) {
    if (labels.empty()) throw UndefinedStatError("flaw prevalence: empty label set");
    std::array<double, kFlawChannelCount> p{};
    for (const auto& l : labels) {
        for (int ch = 0; ch < kFlawChannelCount; ++ch) {
            p[static_cast<std::size_t>(ch)] += l.values[static_cast<std::size_t>(ch)] ? 1.0 : 0.0;
        }
    }
    for (auto& v : p) v /= static_cast<double>(labels.size());
    return p;
}

inline std::vector<FlawLabelSet> random_flaw_baseline(
    const std::array<double, kFlawChannelCount>& prevalence, std::size_t n,
    std::uint64_t seed) {
    for (double p : prevalence) {
        if (p < 0.0 || p > 1.0) {
            throw InvalidSpecError("random_flaw_baseline: prevalence outside [0,1]");
        }
    }
    Rng rng(seed);
    std::vector<FlawLabelSet> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (int ch = 0; ch < kFlawChannelCount; ++ch) {
            out[i].values[static_cast<std::size_t>(ch)] =
                rng.bernoulli(prevalence[static_cast<std::size_t>(ch)]);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline json head_to_json(const FlawHead& h, const TrainConfig& cfg) {
    json j;
    j["kind"] = "flaw_head";
    j["version"] = 1;
    j["backbone_id"] = h.backbone_id;
    j["preprocessing_hash"] = h.preprocessing_hash;
    j["channel_order"] = json::array();
    for (int ch = 0; ch < kFlawChannelCount; ++ch) {
        j["channel_order"].push_back(data::kFlawCodes[static_cast<std::size_t>(ch)]);
    }
    j["w1"] = ser::mat_to_json(h.w1);
    j["b1"] = ser::mat_to_json(h.b1);
    j["w2"] = ser::mat_to_json(h.w2);
    j["b2"] = ser::mat_to_json(h.b2);
    j["w3"] = ser::mat_to_json(h.w3);
    j["b3"] = ser::mat_to_json(h.b3);
    j["train_config"] = {{"learning_rate", cfg.learning_rate},
                         {"epochs", cfg.epochs},
                         {"batch_size", cfg.batch_size},
                         {"seed", cfg.seed},
                         {"threshold", cfg.threshold}};
    return j;
}

inline FlawHead head_from_json(const json& j) {
    if (j.value("kind", "") != std::string("flaw_head")) {
        throw SchemaError("checkpoint: expected kind flaw_head");
    }
    // channel order is part of the contract; refuse a permuted checkpoint
    if (j.contains("channel_order")) {
        const auto order = j["channel_order"].get<std::vector<std::string>>();
        if (order.size() != kFlawChannelCount) {
            throw SchemaError("checkpoint: channel_order must list all 8 channels");
        }
        for (int ch = 0; ch < kFlawChannelCount; ++ch) {
            if (order[static_cast<std::size_t>(ch)] !=
                data::kFlawCodes[static_cast<std::size_t>(ch)]) {
                throw SchemaError("checkpoint: channel_order does not match canonical order");
            }
        }
    }
    FlawHead h;
    h.backbone_id = j.value("backbone_id", "");
    h.preprocessing_hash = j.value("preprocessing_hash", "");
    h.w1 = ser::mat_from_json(j.at("w1"));
    h.b1 = ser::mat_from_json(j.at("b1"));
    h.w2 = ser::mat_from_json(j.at("w2"));
    h.b2 = ser::mat_from_json(j.at("b2"));
    h.w3 = ser::mat_from_json(j.at("w3"));
    h.b3 = ser::mat_from_json(j.at("b3"));
    if (h.w3.cols() != kFlawChannelCount || h.b3.cols() != kFlawChannelCount) {
        throw SchemaError("checkpoint: final layer must emit 8 channels");
    }
    if (h.w2.rows() != h.w1.cols() || h.w3.rows() != h.w2.cols()) {
        throw SchemaError("checkpoint: inconsistent layer shapes");
    }
    return h;
}

inline void save_checkpoint(const std::string& path, const FlawHead& h, const TrainConfig& cfg) {
    ser::write_json_file(path, head_to_json(h, cfg));
}

inline FlawHead load_checkpoint(const std::string& path) {
    return head_from_json(ser::read_json_file(path));
}

}  // namespace iqtk::flaws
