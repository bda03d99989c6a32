#pragma once

// The unrecognizability classifier head: global mean pooling over backbone
// grid features, one hidden rectified layer, one sigmoid output neuron.
// The backbone stays frozen; only the two FC layers train.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "iqtk/error.hpp"
#include "iqtk/eval.hpp"
#include "iqtk/features.hpp"
#include "iqtk/nn.hpp"
#include "iqtk/rng.hpp"
#include "iqtk/serialize.hpp"

namespace iqtk::recognizability {

using features::FeatureTensor;
using nn::Mat;
using json = nlohmann::json;

struct TrainConfig {
    double learning_rate = 0.001;
    int epochs = 8;
    int batch_size = 16;
    std::uint64_t seed = 0;
    double threshold = 0.5;
    int hidden = 512;
};

inline void validate_train_config(const TrainConfig& c) {
    // learning_rate 0 is allowed: it trains nothing, by design
    if (c.learning_rate < 0.0) throw InvalidSpecError("train config: negative learning rate");
    if (c.epochs < 1) throw InvalidSpecError("train config: epochs must be >= 1");
    if (c.batch_size < 1) throw InvalidSpecError("train config: batch_size must be >= 1");
    if (c.hidden < 1) throw InvalidSpecError("train config: hidden width must be >= 1");
    if (c.threshold < 0.0 || c.threshold > 1.0) {
        throw InvalidSpecError("train config: threshold must lie in [0,1]");
    }
}

struct RecognizabilityHead {
    Mat w1, b1, w2, b2;  // (C,H), (1,H), (H,1), (1,1)
    std::string backbone_id;
    std::string preprocessing_hash;

    Eigen::Index in_channels() const { return w1.rows(); }
    Eigen::Index hidden() const { return w1.cols(); }
    std::int64_t parameter_count() const {
        return static_cast<std::int64_t>(w1.size()) + b1.size() + w2.size() + b2.size();
    }
};

inline RecognizabilityHead init_head(Eigen::Index in_channels, Eigen::Index hidden, Rng& rng) {
    RecognizabilityHead h;
    h.w1 = nn::init::glorot(rng, in_channels, hidden);
    h.b1 = nn::init::zeros(1, hidden);
    h.w2 = nn::init::glorot(rng, hidden, 1);
    h.b2 = nn::init::zeros(1, 1);
    return h;
}

// 2-d global mean pooling: (H*W, C) grid -> 1 x C
inline Mat global_pool(const FeatureTensor& t) {
    if (t.kind != features::FeatureKind::grid) {
        throw DimensionError("recognizability: grid features required");
    }
    return t.data.colwise().mean();
}

inline double forward(const RecognizabilityHead& head, const FeatureTensor& t) {
    const Mat pooled = global_pool(t);
    if (pooled.cols() != head.in_channels()) {
        throw DimensionError("recognizability forward: feature channels " +
                             std::to_string(pooled.cols()) + " != head input " +
                             std::to_string(head.in_channels()));
    }
    const Mat h = ((pooled * head.w1 + head.b1).array().max(0.0)).matrix();
    const double logit = (h * head.w2 + head.b2)(0, 0);
    return nn::Tape::stable_sigmoid(logit);
}

struct Prediction {
    double probability = 0.0;
    bool label = false;
};

inline Prediction predict(const RecognizabilityHead& head, const FeatureTensor& t,
                          double threshold = 0.5) {
    Prediction p;
    p.probability = forward(head, t);
    p.label = p.probability >= threshold;
    return p;
}

inline std::vector<Prediction> predict_batch(const RecognizabilityHead& head,
                                             const std::vector<FeatureTensor>& feats,
                                             double threshold = 0.5) {
    std::vector<Prediction> out;
    out.reserve(feats.size());
    for (const auto& t : feats) out.push_back(predict(head, t, threshold));
    return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct EpochLog {
    int epoch = 0;
    double loss = 0.0;     // mean step loss
    double train_ap = 0.0;
};

struct TrainResult {
    RecognizabilityHead head;
    std::vector<EpochLog> log;
    int steps = 0;
};

// Divergence carries the last parameters that produced a finite loss.
struct RecDivergenceError : DivergenceError {
    RecognizabilityHead last_good;
    RecDivergenceError(const std::string& msg, RecognizabilityHead h)
        : DivergenceError(msg), last_good(std::move(h)) {}
};

// Pools every tensor up front and runs minibatch Adam on the two FC layers.
inline TrainResult train(const std::vector<FeatureTensor>& feats,
                         const std::vector<bool>& labels, const TrainConfig& cfg = {}) {
    validate_train_config(cfg);
    if (feats.size() != labels.size()) {
        throw DimensionError("recognizability train: features/labels size mismatch");
    }
    if (feats.empty()) throw DegenerateTrainingError("recognizability train: empty split");
    bool any_pos = false, any_neg = false;
    for (bool y : labels) (y ? any_pos : any_neg) = true;
    if (!any_pos || !any_neg) {
        throw DegenerateTrainingError(
            "recognizability train: split holds a single class; need both");
    }

    const auto n = static_cast<Eigen::Index>(feats.size());
    const Eigen::Index c = feats[0].channels();
    Mat x(n, c);
    Mat y(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& t = feats[static_cast<std::size_t>(i)];
        if (t.channels() != c) {
            throw DimensionError("recognizability train: inconsistent feature channels");
        }
        x.row(i) = global_pool(t);
        y(i, 0) = labels[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    }

    Rng rng(cfg.seed);
    TrainResult res;
    res.head = init_head(c, cfg.hidden, rng);
    res.head.backbone_id = feats[0].backbone_id;
    res.head.preprocessing_hash = feats[0].preprocessing_hash;
    RecognizabilityHead last_good = res.head;

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
            Mat bx(bsz, c), by(bsz, 1);
            for (Eigen::Index k = 0; k < bsz; ++k) {
                const auto src = static_cast<Eigen::Index>(order[start + static_cast<std::size_t>(k)]);
                bx.row(k) = x.row(src);
                by(k, 0) = y(src, 0);
            }
            nn::Tape tape;
            const auto vw1 = tape.input(res.head.w1);
            const auto vb1 = tape.input(res.head.b1);
            const auto vw2 = tape.input(res.head.w2);
            const auto vb2 = tape.input(res.head.b2);
            const auto hidden = tape.relu(tape.add_rowvec(tape.matmul(tape.input(bx), vw1), vb1));
            const auto logits = tape.add_rowvec(tape.matmul(hidden, vw2), vb2);
            const auto loss = tape.bce_with_logits(logits, by);
            const double loss_value = tape.value(loss)(0, 0);
            if (!std::isfinite(loss_value)) {
                throw RecDivergenceError(
                    "recognizability train: non-finite loss at epoch " +
                        std::to_string(epoch) + "; rolling back to last finite state",
                    last_good);
            }
            last_good = res.head;
            tape.backward(loss);
            const Mat g1 = tape.grad(vw1), g2 = tape.grad(vb1), g3 = tape.grad(vw2),
                      g4 = tape.grad(vb2);
            opt.step({&res.head.w1, &res.head.b1, &res.head.w2, &res.head.b2},
                     {&g1, &g2, &g3, &g4});
            loss_sum += loss_value;
            ++steps_this_epoch;
            ++res.steps;
        }
        EpochLog el;
        el.epoch = epoch;
        el.loss = loss_sum / std::max(1, steps_this_epoch);
        std::vector<double> scores;
        scores.reserve(static_cast<std::size_t>(n));
        for (const auto& t : feats) scores.push_back(forward(res.head, t));
        el.train_ap = eval::average_precision(scores, labels);
        res.log.push_back(el);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Random-guess baseline
// ---------------------------------------------------------------------------

inline std::vector<bool> random_guess_baseline(std::size_t n, double p, std::uint64_t seed) {
    if (p < 0.0 || p > 1.0) {
        throw InvalidSpecError("random_guess_baseline: p must lie in [0,1]");
    }
    Rng rng(seed);
    std::vector<bool> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = rng.bernoulli(p);
    return out;
}

inline constexpr double kUnrecognizablePrior = 0.148;

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline json head_to_json(const RecognizabilityHead& h, const TrainConfig& cfg) {
    json j;
    j["kind"] = "recognizability_head";
    j["version"] = 1;
    j["backbone_id"] = h.backbone_id;
    j["preprocessing_hash"] = h.preprocessing_hash;
    j["w1"] = ser::mat_to_json(h.w1);
    j["b1"] = ser::mat_to_json(h.b1);
    j["w2"] = ser::mat_to_json(h.w2);
    j["b2"] = ser::mat_to_json(h.b2);
    j["train_config"] = {{"learning_rate", cfg.learning_rate},
                         {"epochs", cfg.epochs},
                         {"batch_size", cfg.batch_size},
                         {"seed", cfg.seed},
                         {"threshold", cfg.threshold},
                         {"hidden", cfg.hidden}};
    return j;
}

inline RecognizabilityHead head_from_json(const json& j, TrainConfig* cfg_out = nullptr) {
    if (j.value("kind", "") != std::string("recognizability_head")) {
        throw SchemaError("checkpoint: expected kind recognizability_head");
    }
    RecognizabilityHead h;
    h.backbone_id = j.value("backbone_id", "");
    h.preprocessing_hash = j.value("preprocessing_hash", "");
    h.w1 = ser::mat_from_json(j.at("w1"));
    h.b1 = ser::mat_from_json(j.at("b1"));
    h.w2 = ser::mat_from_json(j.at("w2"));
    h.b2 = ser::mat_from_json(j.at("b2"));
    if (h.b1.cols() != h.w1.cols() || h.w2.rows() != h.w1.cols() || h.b2.size() != 1) {
        throw SchemaError("checkpoint: inconsistent layer shapes");
    }
    if (cfg_out != nullptr && j.contains("train_config")) {
        const auto& t = j["train_config"];
        cfg_out->learning_rate = t.value("learning_rate", 0.001);
        cfg_out->epochs = t.value("epochs", 8);
        cfg_out->batch_size = t.value("batch_size", 16);
        cfg_out->seed = t.value("seed", std::uint64_t{0});
        cfg_out->threshold = t.value("threshold", 0.5);
        cfg_out->hidden = t.value("hidden", 512);
    }
    return h;
}

inline void save_checkpoint(const std::string& path, const RecognizabilityHead& h,
                            const TrainConfig& cfg) {
    ser::write_json_file(path, head_to_json(h, cfg));
}

inline RecognizabilityHead load_checkpoint(const std::string& path,
                                           TrainConfig* cfg_out = nullptr) {
    return head_from_json(ser::read_json_file(path), cfg_out);
}

}  // namespace iqtk::recognizability
