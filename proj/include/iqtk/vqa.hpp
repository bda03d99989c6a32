#pragma once

// Why-is-this-question-unanswerable model: a GRU question encoder, top-down
// attention over image region features, element-wise product fusion, and a
// choice of prediction head — a 3-way softmax over reason classes or two
// independent sigmoids (answerable / unrecognizable).

#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "iqtk/error.hpp"
#include "iqtk/features.hpp"
#include "iqtk/hashing.hpp"
#include "iqtk/labels.hpp"
#include "iqtk/nn.hpp"
#include "iqtk/recognizability.hpp"
#include "iqtk/rng.hpp"
#include "iqtk/serialize.hpp"

namespace iqtk::vqa {

using features::FeatureTensor;
using nn::Mat;
using nn::Tape;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Tokenization and vocabulary
// ---------------------------------------------------------------------------

// Lowercased, punctuation stripped, whitespace split.
inline std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char ch : text) {
        if (std::isalnum(ch) != 0) {
            cur.push_back(static_cast<char>(std::tolower(ch)));
        } else if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

struct Vocab {
    static constexpr int kOovIndex = 0;
    static constexpr int kEmptyIndex = 1;

    std::map<std::string, int> tokens;  // token -> index >= 2
    int min_freq = 1;
    std::string version_hash;

    int size() const { return 2 + static_cast<int>(tokens.size()); }
    int lookup(const std::string& tok) const {
        const auto it = tokens.find(tok);
        return it == tokens.end() ? kOovIndex : it->second;
    }
};

inline std::string vocab_hash(const std::map<std::string, int>& tokens, int min_freq) {
    std::string canon = "minfreq=" + std::to_string(min_freq) + ";";
    for (const auto& [tok, idx] : tokens) canon += tok + "=" + std::to_string(idx) + ";";
    return hex64(fnv1a64(canon));
}

inline Vocab build_vocab(const std::vector<std::string>& questions, int min_freq = 1) {
    if (min_freq < 1) throw InvalidSpecError("build_vocab: min_freq must be >= 1");
    std::map<std::string, int> freq;
    for (const auto& q : questions) {
        for (const auto& tok : tokenize(q)) ++freq[tok];
    }
    Vocab v;
    v.min_freq = min_freq;
    int next = 2;  // 0 = OOV, 1 = empty question
    for (const auto& [tok, count] : freq) {
        if (count >= min_freq) v.tokens.emplace(tok, next++);
    }
    v.version_hash = vocab_hash(v.tokens, min_freq);
    return v;
}

inline std::vector<int> token_ids(const Vocab& v, const std::string& text) {
    std::vector<int> ids;
    for (const auto& tok : tokenize(text)) ids.push_back(v.lookup(tok));
    if (ids.empty()) ids.push_back(Vocab::kEmptyIndex);
    return ids;
}

inline json vocab_to_json(const Vocab& v) {
    json j;
    j["kind"] = "vocab";
    j["version"] = 1;
    j["min_freq"] = v.min_freq;
    j["hash"] = v.version_hash;
    j["tokens"] = json::object();
    for (const auto& [tok, idx] : v.tokens) j["tokens"][tok] = idx;
    return j;
}

inline Vocab vocab_from_json(const json& j) {
    if (j.value("kind", "") != std::string("vocab")) {
        throw SchemaError("vocab: expected kind vocab");
    }
    Vocab v;
    v.min_freq = j.value("min_freq", 1);
    for (const auto& [tok, idx] : j.at("tokens").items()) {
        const int i = idx.get<int>();
        if (i < 2) throw SchemaError("vocab: token index collides with reserved slots");
        v.tokens.emplace(tok, i);
    }
    v.version_hash = vocab_hash(v.tokens, v.min_freq);
    if (j.contains("hash") && j["hash"].get<std::string>() != v.version_hash) {
        throw SchemaError("vocab: stored hash does not match token table");
    }
    return v;
}

inline void save_vocab(const std::string& path, const Vocab& v) {
    ser::write_json_file(path, vocab_to_json(v));
}

inline Vocab load_vocab(const std::string& path) {
    return vocab_from_json(ser::read_json_file(path));
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

enum class HeadVariant { softmax3, dual_sigmoid };

inline const char* head_variant_name(HeadVariant v) {
    return v == HeadVariant::softmax3 ? "softmax3" : "dual_sigmoid";
}

inline HeadVariant head_variant_from_name(const std::string& s) {
    if (s == "softmax3") return HeadVariant::softmax3;
    if (s == "dual_sigmoid") return HeadVariant::dual_sigmoid;
    throw SchemaError("unknown head variant: " + s);
}

inline int head_outputs(HeadVariant v) { return v == HeadVariant::softmax3 ? 3 : 2; }

struct ReasonConfig {
    int embed_dim = 300;
    int gru_hidden = 512;
    int att_hidden = 512;
    int fusion_dim = 512;
    int min_freq = 1;
    HeadVariant variant = HeadVariant::softmax3;
    bool use_attention = true;
    recognizability::TrainConfig train;
};

inline void validate_reason_config(const ReasonConfig& c) {
    recognizability::validate_train_config(c.train);
    if (c.embed_dim < 1 || c.gru_hidden < 1 || c.att_hidden < 1 || c.fusion_dim < 1) {
        throw InvalidSpecError("reason config: all widths must be >= 1");
    }
    if (c.min_freq < 1) throw InvalidSpecError("reason config: min_freq must be >= 1");
}

// GRU convention: n_t = tanh(x W_n + (r ∘ h) U_n + b_n); h_t = (1-z) ∘ n + z ∘ h.
struct ReasonModel {
    Vocab vocab;
    Mat embedding;                          // (V, E)
    Mat wz, uz, bz, wr, ur, br, wn, un, bn; // GRU: (E,H) (H,H) (1,H) each gate
    Mat att_w1;                             // (C, A) image projection
    Mat att_w2;                             // (H, A) question projection
    Mat att_v;                              // (A, 1) scorer
    Mat proj_img;                           // (C, F)
    Mat proj_q;                             // (H, F)
    Mat head_w;                             // (F, 3|2)
    Mat head_b;                             // (1, 3|2)
    HeadVariant variant = HeadVariant::softmax3;
    bool use_attention = true;
    std::string backbone_id;
    std::string preprocessing_hash;

    Eigen::Index embed_dim() const { return embedding.cols(); }
    Eigen::Index gru_hidden() const { return wz.cols(); }
    Eigen::Index in_channels() const { return att_w1.rows(); }
    std::int64_t parameter_count() const {
        std::int64_t total = 0;
        for (const Mat* m : {&embedding, &wz, &uz, &bz, &wr, &ur, &br, &wn, &un, &bn,
                             &att_w1, &att_w2, &att_v, &proj_img, &proj_q, &head_w, &head_b}) {
            total += m->size();
        }
        return total;
    }
};

inline ReasonModel init_reason_model(const Vocab& vocab, Eigen::Index in_channels,
                                     const ReasonConfig& cfg, Rng& rng) {
    validate_reason_config(cfg);
    const int e = cfg.embed_dim, h = cfg.gru_hidden, a = cfg.att_hidden, f = cfg.fusion_dim;
    ReasonModel m;
    m.vocab = vocab;
    m.variant = cfg.variant;
    m.use_attention = cfg.use_attention;
    m.embedding = nn::init::glorot(rng, vocab.size(), e);
    m.wz = nn::init::glorot(rng, e, h);
    m.uz = nn::init::glorot(rng, h, h);
    m.bz = nn::init::zeros(1, h);
    m.wr = nn::init::glorot(rng, e, h);
    m.ur = nn::init::glorot(rng, h, h);
    m.br = nn::init::zeros(1, h);
    m.wn = nn::init::glorot(rng, e, h);
    m.un = nn::init::glorot(rng, h, h);
    m.bn = nn::init::zeros(1, h);
    m.att_w1 = nn::init::glorot(rng, in_channels, a);
    m.att_w2 = nn::init::glorot(rng, h, a);
    m.att_v = nn::init::glorot(rng, a, 1);
    m.proj_img = nn::init::glorot(rng, in_channels, f);
    m.proj_q = nn::init::glorot(rng, h, f);
    m.head_w = nn::init::glorot(rng, f, head_outputs(cfg.variant));
    m.head_b = nn::init::zeros(1, head_outputs(cfg.variant));
    return m;
}

// ---------------------------------------------------------------------------
// Tape graph: one code path shared by training and inference
// ---------------------------------------------------------------------------

struct TapeParams {
    Tape::Var embedding, wz, uz, bz, wr, ur, br, wn, un, bn;
    Tape::Var att_w1, att_w2, att_v, proj_img, proj_q, head_w, head_b;

    std::vector<Tape::Var> all() const {
        return {embedding, wz, uz, bz, wr, ur, br, wn, un, bn,
                att_w1, att_w2, att_v, proj_img, proj_q, head_w, head_b};
    }
};

inline TapeParams load_params(Tape& t, const ReasonModel& m) {
    TapeParams p;
    p.embedding = t.input(m.embedding);
    p.wz = t.input(m.wz);
    p.uz = t.input(m.uz);
    p.bz = t.input(m.bz);
    p.wr = t.input(m.wr);
    p.ur = t.input(m.ur);
    p.br = t.input(m.br);
    p.wn = t.input(m.wn);
    p.un = t.input(m.un);
    p.bn = t.input(m.bn);
    p.att_w1 = t.input(m.att_w1);
    p.att_w2 = t.input(m.att_w2);
    p.att_v = t.input(m.att_v);
    p.proj_img = t.input(m.proj_img);
    p.proj_q = t.input(m.proj_q);
    p.head_w = t.input(m.head_w);
    p.head_b = t.input(m.head_b);
    return p;
}

inline Tape::Var gru_encode(Tape& t, const TapeParams& p, const std::vector<int>& ids) {
    const auto h_dim = t.value(p.wz).cols();
    Tape::Var h = t.input(Mat::Zero(1, h_dim));
    for (int id : ids) {
        const auto x = t.select_rows(p.embedding, {static_cast<Eigen::Index>(id)});
        const auto z =
            t.sigmoid(t.add(t.add(t.matmul(x, p.wz), t.matmul(h, p.uz)), p.bz));
        const auto r =
            t.sigmoid(t.add(t.add(t.matmul(x, p.wr), t.matmul(h, p.ur)), p.br));
        const auto n = t.tanh_(
            t.add(t.add(t.matmul(x, p.wn), t.matmul(t.mul(r, h), p.un)), p.bn));
        h = t.add(t.mul(t.affine(z, -1.0, 1.0), n), t.mul(z, h));
    }
    return h;
}

// Returns the attended 1xC feature; weights_out (optional) receives the 1xK
// simplex weights. With use_attention false the image is mean-pooled and the
// weights are the implied uniform 1/K.
inline Tape::Var attend_on_tape(Tape& t, const TapeParams& p, Tape::Var q, const Mat& regions,
                                bool use_attention, Tape::Var* weights_out = nullptr) {
    if (regions.rows() < 1 || regions.cols() < 1) {
        throw DimensionError("attend: empty region matrix");
    }
    const auto img = t.input(regions);
    if (!use_attention) {
        if (weights_out != nullptr) {
            *weights_out = t.input(
                Mat::Constant(1, regions.rows(), 1.0 / static_cast<double>(regions.rows())));
        }
        return t.mean_rows(img);
    }
    if (regions.cols() != t.value(p.att_w1).rows()) {
        throw DimensionError("attend: feature channels " + std::to_string(regions.cols()) +
                             " != attention input " + std::to_string(t.value(p.att_w1).rows()));
    }
    const auto act = t.tanh_(t.add_rowvec(t.matmul(img, p.att_w1), t.matmul(q, p.att_w2)));
    const auto scores = t.matmul(act, p.att_v);           // K x 1
    const auto weights = t.softmax_rows(t.transpose(scores));  // 1 x K, simplex
    if (weights_out != nullptr) *weights_out = weights;
    return t.matmul(weights, img);
}

inline Tape::Var head_logits(Tape& t, const TapeParams& p, Tape::Var q, Tape::Var attended) {
    const auto fi = t.tanh_(t.matmul(attended, p.proj_img));
    const auto fq = t.tanh_(t.matmul(q, p.proj_q));
    const auto fused = t.mul(fi, fq);  // element-wise product coupling
    return t.add(t.matmul(fused, p.head_w), p.head_b);
}

// ---------------------------------------------------------------------------
// Public forward passes
// ---------------------------------------------------------------------------

struct QuestionEncoding {
    std::vector<int> ids;
    Mat hidden;  // 1 x H
};

inline QuestionEncoding encode_question(const std::string& text, const ReasonModel& m) {
    Tape t;
    const auto p = load_params(t, m);
    QuestionEncoding enc;
    enc.ids = token_ids(m.vocab, text);
    enc.hidden = t.value(gru_encode(t, p, enc.ids));
    return enc;
}

struct AttentionResult {
    Mat attended;                  // 1 x C
    std::vector<double> weights;   // K, on the simplex
};

inline AttentionResult attend(const ReasonModel& m, const QuestionEncoding& q,
                              const FeatureTensor& img) {
    if (q.hidden.cols() != m.gru_hidden()) {
        throw DimensionError("attend: question hidden width mismatch");
    }
    Tape t;
    const auto p = load_params(t, m);
    Tape::Var w{};
    const auto att = attend_on_tape(t, p, t.input(q.hidden), img.data, true, &w);
    AttentionResult out;
    out.attended = t.value(att);
    const Mat& wm = t.value(w);
    out.weights.assign(wm.data(), wm.data() + wm.size());
    return out;
}

struct ReasonPrediction {
    std::string image_id;
    std::string question;
    HeadVariant variant = HeadVariant::softmax3;
    std::array<double, 3> distribution{};        // softmax3 only
    double p_answerable = 0.0;                   // dual_sigmoid only
    double p_unrecognizable = 0.0;               // dual_sigmoid only
    data::ReasonClass reason = data::ReasonClass::InsufficientContent;
    std::vector<double> attention_weights;
};

namespace detail {

inline ReasonPrediction predict_with(const ReasonModel& m, const std::string& question,
                                     const FeatureTensor& img, bool use_attention) {
    if (m.head_w.cols() != head_outputs(m.variant)) {
        throw ConfigError("predict: head width does not match declared variant");
    }
    if (img.data.cols() != m.in_channels()) {
        throw DimensionError("predict: feature channels " + std::to_string(img.data.cols()) +
                             " != model input " + std::to_string(m.in_channels()));
    }
    Tape t;
    const auto p = load_params(t, m);
    const auto q = gru_encode(t, p, token_ids(m.vocab, question));
    Tape::Var w{};
    const auto att = attend_on_tape(t, p, q, img.data, use_attention, &w);
    const auto logits = head_logits(t, p, q, att);

    ReasonPrediction out;
    out.question = question;
    out.variant = m.variant;
    const Mat& wm = t.value(w);
    out.attention_weights.assign(wm.data(), wm.data() + wm.size());
    if (m.variant == HeadVariant::softmax3) {
        const Mat probs = t.value(t.softmax_rows(logits));
        int best = 0;
        for (int k = 0; k < 3; ++k) {
            out.distribution[static_cast<std::size_t>(k)] = probs(0, k);
            if (probs(0, k) > probs(0, best)) best = k;
        }
        out.reason = static_cast<data::ReasonClass>(best);
    } else {
        const Mat& z = t.value(logits);
        out.p_answerable = Tape::stable_sigmoid(z(0, 0));
        out.p_unrecognizable = Tape::stable_sigmoid(z(0, 1));
        const bool ans = out.p_answerable >= 0.5;
        const bool unrec = out.p_unrecognizable >= 0.5;
        out.reason = data::derive_reason_class(ans, unrec);
    }
    return out;
}

}  // namespace detail

inline ReasonPrediction predict_reason(const ReasonModel& m, const std::string& question,
                                       const FeatureTensor& img) {
    return detail::predict_with(m, question, img, m.use_attention);
}

// Ablation: mean-pooled image feature replaces the attention module.
inline ReasonPrediction ablate_attention(const ReasonModel& m, const std::string& question,
                                         const FeatureTensor& img) {
    return detail::predict_with(m, question, img, false);
}

// ---------------------------------------------------------------------------
// Targets (manual-assignment rule applied at emission)
// ---------------------------------------------------------------------------

struct ReasonExample {
    std::string image_id;
    std::string question;
    FeatureTensor features;
    bool answerable = false;
    bool unrecognizable = false;
};

inline std::vector<int> emit_softmax3_targets(const std::vector<ReasonExample>& examples) {
    std::vector<int> out;
    out.reserve(examples.size());
    for (const auto& e : examples) {
        out.push_back(static_cast<int>(data::derive_reason_class(e.answerable, e.unrecognizable)));
    }
    return out;
}

inline Mat emit_dual_targets(const std::vector<ReasonExample>& examples) {
    Mat t(static_cast<Eigen::Index>(examples.size()), 2);
    for (Eigen::Index i = 0; i < t.rows(); ++i) {
        const auto& e = examples[static_cast<std::size_t>(i)];
        t(i, 0) = e.answerable ? 1.0 : 0.0;
        // answerable questions are never counted unrecognizable
        t(i, 1) = (!e.answerable && e.unrecognizable) ? 1.0 : 0.0;
    }
    return t;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct ReasonEpochLog {
    int epoch = 0;
    double loss = 0.0;
    double accuracy = 0.0;  // reason-class accuracy on the training split
};

struct ReasonTrainResult {
    ReasonModel model;
    std::vector<ReasonEpochLog> log;
    int steps = 0;
};

struct ReasonDivergenceError : DivergenceError {
    ReasonModel last_good;
    ReasonDivergenceError(const std::string& msg, ReasonModel m)
        : DivergenceError(msg), last_good(std::move(m)) {}
};

inline ReasonTrainResult train_reason(const std::vector<ReasonExample>& examples,
                                      const ReasonConfig& cfg) {
    validate_reason_config(cfg);
    if (examples.empty()) throw DegenerateTrainingError("reason train: empty split");
    const Eigen::Index c = examples[0].features.channels();
    for (const auto& e : examples) {
        if (e.features.channels() != c) {
            throw DimensionError("reason train: inconsistent feature channels");
        }
    }
    const auto targets = emit_softmax3_targets(examples);
    bool multiclass = false;
    for (int t : targets) multiclass = multiclass || (t != targets[0]);
    if (!multiclass) {
        throw DegenerateTrainingError("reason train: all examples share one reason class");
    }

    std::vector<std::string> questions;
    questions.reserve(examples.size());
    for (const auto& e : examples) questions.push_back(e.question);
    const Vocab vocab = build_vocab(questions, cfg.min_freq);

    Rng rng(cfg.train.seed);
    ReasonTrainResult res;
    res.model = init_reason_model(vocab, c, cfg, rng);
    res.model.backbone_id = examples[0].features.backbone_id;
    res.model.preprocessing_hash = examples[0].features.preprocessing_hash;
    ReasonModel last_good = res.model;

    std::vector<std::vector<int>> ids;
    ids.reserve(examples.size());
    for (const auto& e : examples) ids.push_back(token_ids(vocab, e.question));
    const Mat dual_targets = emit_dual_targets(examples);

    nn::Adam opt(cfg.train.learning_rate);
    std::vector<std::size_t> order(examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        int steps_this_epoch = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.train.batch_size)) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.train.batch_size));
            Tape tape;
            const auto p = load_params(tape, res.model);
            Tape::Var loss{};
            bool first = true;
            for (std::size_t k = start; k < stop; ++k) {
                const std::size_t i = order[k];
                const auto& ex = examples[i];
                const auto q = gru_encode(tape, p, ids[i]);
                const auto att =
                    attend_on_tape(tape, p, q, ex.features.data, cfg.use_attention);
                const auto logits = head_logits(tape, p, q, att);
                Tape::Var sample_loss{};
                if (cfg.variant == HeadVariant::softmax3) {
                    sample_loss = tape.softmax_ce(logits, {targets[i]});
                } else {
                    sample_loss = tape.scale(
                        tape.bce_with_logits(logits, dual_targets.row(static_cast<Eigen::Index>(i))),
                        2.0);  // summed over the two sigmoids
                }
                loss = first ? sample_loss : tape.add(loss, sample_loss);
                first = false;
            }
            loss = tape.affine(loss, 1.0 / static_cast<double>(stop - start), 0.0);
            const double loss_value = tape.value(loss)(0, 0);
            if (!std::isfinite(loss_value)) {
                throw ReasonDivergenceError("reason train: non-finite loss at epoch " +
                                                std::to_string(epoch),
                                            last_good);
            }
            last_good = res.model;
            tape.backward(loss);
            const auto vars = p.all();
            std::vector<Mat> grads;
            grads.reserve(vars.size());
            for (const auto& v : vars) grads.push_back(tape.grad(v));
            std::vector<Mat*> params = {
                &res.model.embedding, &res.model.wz, &res.model.uz, &res.model.bz,
                &res.model.wr,        &res.model.ur, &res.model.br, &res.model.wn,
                &res.model.un,        &res.model.bn, &res.model.att_w1, &res.model.att_w2,
                &res.model.att_v,     &res.model.proj_img, &res.model.proj_q,
                &res.model.head_w,    &res.model.head_b};
            std::vector<const Mat*> grad_ptrs;
            grad_ptrs.reserve(grads.size());
            for (const auto& g : grads) grad_ptrs.push_back(&g);
            opt.step(params, grad_ptrs);
            loss_sum += loss_value;
            ++steps_this_epoch;
            ++res.steps;
        }
        ReasonEpochLog el;
        el.epoch = epoch;
        el.loss = loss_sum / std::max(1, steps_this_epoch);
        int correct = 0;
        for (std::size_t i = 0; i < examples.size(); ++i) {
            const auto pred = detail::predict_with(res.model, examples[i].question,
                                                   examples[i].features, cfg.use_attention);
            if (static_cast<int>(pred.reason) == targets[i]) ++correct;
        }
        el.accuracy = static_cast<double>(correct) / static_cast<double>(examples.size());
        res.log.push_back(el);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Prediction output (JSON lines) and checkpoints
// ---------------------------------------------------------------------------

inline json prediction_to_json(const ReasonPrediction& p) {
    json j;
    j["image_id"] = p.image_id;
    j["question"] = p.question;
    j["variant"] = head_variant_name(p.variant);
    j["reason_class"] = data::reason_name(p.reason);
    if (p.variant == HeadVariant::softmax3) {
        j["distribution"] = {p.distribution[0], p.distribution[1], p.distribution[2]};
    } else {
        j["p_answerable"] = p.p_answerable;
        j["p_unrecognizable"] = p.p_unrecognizable;
    }
    return j;
}

inline std::string predictions_to_jsonl(const std::vector<ReasonPrediction>& preds) {
    std::string out;
    for (const auto& p : preds) out += prediction_to_json(p).dump() + "\n";
    return out;
}

inline json model_to_json(const ReasonModel& m, const ReasonConfig& cfg) {
    json j;
    j["kind"] = "reason_model";
    j["version"] = 1;
    j["variant"] = head_variant_name(m.variant);
    j["use_attention"] = m.use_attention;
    j["backbone_id"] = m.backbone_id;
    j["preprocessing_hash"] = m.preprocessing_hash;
    j["vocab"] = vocab_to_json(m.vocab);
    j["embedding"] = ser::mat_to_json(m.embedding);
    j["wz"] = ser::mat_to_json(m.wz);
    j["uz"] = ser::mat_to_json(m.uz);
    j["bz"] = ser::mat_to_json(m.bz);
    j["wr"] = ser::mat_to_json(m.wr);
    j["ur"] = ser::mat_to_json(m.ur);
    j["br"] = ser::mat_to_json(m.br);
    j["wn"] = ser::mat_to_json(m.wn);
    j["un"] = ser::mat_to_json(m.un);
    j["bn"] = ser::mat_to_json(m.bn);
    j["att_w1"] = ser::mat_to_json(m.att_w1);
    j["att_w2"] = ser::mat_to_json(m.att_w2);
    j["att_v"] = ser::mat_to_json(m.att_v);
    j["proj_img"] = ser::mat_to_json(m.proj_img);
    j["proj_q"] = ser::mat_to_json(m.proj_q);
    j["head_w"] = ser::mat_to_json(m.head_w);
    j["head_b"] = ser::mat_to_json(m.head_b);
    j["train_config"] = {{"learning_rate", cfg.train.learning_rate},
                         {"epochs", cfg.train.epochs},
                         {"batch_size", cfg.train.batch_size},
                         {"seed", cfg.train.seed},
                         {"threshold", cfg.train.threshold}};
    return j;
}

inline ReasonModel model_from_json(const json& j) {
    if (j.value("kind", "") != std::string("reason_model")) {
        throw SchemaError("checkpoint: expected kind reason_model");
    }
    ReasonModel m;
    m.variant = head_variant_from_name(j.at("variant").get<std::string>());
    m.use_attention = j.value("use_attention", true);
    m.backbone_id = j.value("backbone_id", "");
    m.preprocessing_hash = j.value("preprocessing_hash", "");
    m.vocab = vocab_from_json(j.at("vocab"));
    m.embedding = ser::mat_from_json(j.at("embedding"));
    m.wz = ser::mat_from_json(j.at("wz"));
    m.uz = ser::mat_from_json(j.at("uz"));
    m.bz = ser::mat_from_json(j.at("bz"));
    m.wr = ser::mat_from_json(j.at("wr"));
    m.ur = ser::mat_from_json(j.at("ur"));
    m.br = ser::mat_from_json(j.at("br"));
    m.wn = ser::mat_from_json(j.at("wn"));
    m.un = ser::mat_from_json(j.at("un"));
    m.bn = ser::mat_from_json(j.at("bn"));
    m.att_w1 = ser::mat_from_json(j.at("att_w1"));
    m.att_w2 = ser::mat_from_json(j.at("att_w2"));
    m.att_v = ser::mat_from_json(j.at("att_v"));
    m.proj_img = ser::mat_from_json(j.at("proj_img"));
    m.proj_q = ser::mat_from_json(j.at("proj_q"));
    m.head_w = ser::mat_from_json(j.at("head_w"));
    m.head_b = ser::mat_from_json(j.at("head_b"));
    if (m.embedding.rows() != m.vocab.size()) {
        throw SchemaError("checkpoint: embedding rows != vocab size");
    }
    if (m.head_w.cols() != head_outputs(m.variant) || m.head_b.cols() != m.head_w.cols()) {
        throw SchemaError("checkpoint: head width does not match variant");
    }
    const auto h = m.wz.cols();
    if (m.uz.rows() != h || m.ur.rows() != h || m.un.rows() != h || m.att_w2.rows() != h ||
        m.proj_q.rows() != h) {
        throw SchemaError("checkpoint: inconsistent GRU hidden width");
    }
    if (m.proj_img.rows() != m.att_w1.rows()) {
        throw SchemaError("checkpoint: inconsistent image channel width");
    }
    return m;
}

inline void save_checkpoint(const std::string& path, const ReasonModel& m,
                            const ReasonConfig& cfg) {
    ser::write_json_file(path, model_to_json(m, cfg));
}

inline ReasonModel load_checkpoint(const std::string& path) {
    return model_from_json(ser::read_json_file(path));
}

}  // namespace iqtk::vqa
