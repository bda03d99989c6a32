#pragma once

#include <array>
#include <cctype>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "iqtk/error.hpp"

namespace iqtk::data {

// ---------------------------------------------------------------------------
// Quality-flaw taxonomy: eight channels in fixed canonical order.
// ---------------------------------------------------------------------------

inline constexpr int kFlawChannelCount = 8;

enum class FlawChannel : int {
    Blur = 0,
    Bright = 1,
    Dark = 2,
    Obstruction = 3,
    Framing = 4,
    Rotation = 5,
    Other = 6,
    None = 7,
};

inline constexpr std::array<const char*, kFlawChannelCount> kFlawCodes = {
    "BLR", "BRT", "DRK", "OBS", "FRM", "ROT", "OTH", "NON"};

inline const char* flaw_code(FlawChannel c) {
    return kFlawCodes[static_cast<std::size_t>(c)];
}

inline std::optional<FlawChannel> flaw_from_code(std::string_view code) {
    for (int i = 0; i < kFlawChannelCount; ++i) {
        if (code == kFlawCodes[static_cast<std::size_t>(i)]) {
            return static_cast<FlawChannel>(i);
        }
    }
    return std::nullopt;
}

inline constexpr std::array<FlawChannel, kFlawChannelCount> kAllFlawChannels = {
    FlawChannel::Blur,       FlawChannel::Bright, FlawChannel::Dark,
    FlawChannel::Obstruction, FlawChannel::Framing, FlawChannel::Rotation,
    FlawChannel::Other,      FlawChannel::None};

// Boolean form of the eight-way flaw vector. NON is an ordinary channel and
// may co-hold with flaw channels after aggregation.
struct FlawLabelSet {
    std::array<bool, kFlawChannelCount> values{};
    // Free-form strings attached to OTH; preserved verbatim, never analyzed.
    std::vector<std::string> other_texts;

    bool operator[](FlawChannel c) const { return values[static_cast<std::size_t>(c)]; }
    void set(FlawChannel c, bool v) { values[static_cast<std::size_t>(c)] = v; }

    bool any() const {
        for (bool v : values)
            if (v) return true;
        return false;
    }

    bool operator==(const FlawLabelSet& o) const {
        return values == o.values && other_texts == o.other_texts;
    }
};

// Probabilistic (predicted) form: every channel in [0,1].
struct FlawProbabilities {
    std::array<double, kFlawChannelCount> values{};

    double operator[](FlawChannel c) const { return values[static_cast<std::size_t>(c)]; }

    FlawLabelSet thresholded(double threshold = 0.5) const {
        FlawLabelSet out;
        for (int i = 0; i < kFlawChannelCount; ++i) {
            out.values[static_cast<std::size_t>(i)] =
                values[static_cast<std::size_t>(i)] >= threshold;
        }
        return out;
    }
};

// ---------------------------------------------------------------------------
// Annotation records
// ---------------------------------------------------------------------------

// Caption that stands in for "cannot caption": byte equality (after trimming
// surrounding whitespace) is the one and only marker of unrecognizability.
inline constexpr const char* kUnrecognizableSentinel =
    "Quality issues are too severe to recognize the visual content.";

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

struct WorkerAnnotation {
    std::string worker_id;
    std::string caption;
    bool unrecognizable = false;
    FlawLabelSet flaws;  // boolean form; at least one channel must be true
};

enum class SourceTask { captioning, vqa };

inline const char* source_task_name(SourceTask t) {
    return t == SourceTask::captioning ? "captioning" : "vqa";
}

inline std::optional<SourceTask> source_task_from_name(std::string_view s) {
    if (s == "captioning") return SourceTask::captioning;
    if (s == "vqa") return SourceTask::vqa;
    return std::nullopt;
}

struct ImageRecord {
    std::string image_id;
    std::string uri;
    SourceTask source_task = SourceTask::captioning;
    std::optional<std::string> question;  // required when source_task == vqa
    std::vector<WorkerAnnotation> annotations;
};

// Throws ValidationError naming the image_id and field on the first violated
// invariant. expected_redundancy <= 0 disables the annotation-count check.
inline void validate_annotation(const std::string& image_id, const WorkerAnnotation& a) {
    const std::string caption = trim(a.caption);
    if (caption.empty()) {
        throw ValidationError(image_id, "caption", "caption must be nonempty");
    }
    const bool is_sentinel = caption == kUnrecognizableSentinel;
    if (a.unrecognizable && !is_sentinel) {
        throw ValidationError(image_id, "caption",
                              "unrecognizable=true requires the exact sentinel caption");
    }
    if (!a.unrecognizable && is_sentinel) {
        throw ValidationError(image_id, "unrecognizable",
                              "sentinel caption requires unrecognizable=true");
    }
    // A caption that starts with the sentinel but carries extra text is
    // ambiguous; rejected rather than guessed at.
    if (!is_sentinel && caption.rfind(kUnrecognizableSentinel, 0) == 0) {
        throw ValidationError(image_id, "caption",
                              "caption extends the sentinel string; ambiguous record");
    }
    if (!a.flaws.any()) {
        throw ValidationError(image_id, "flaws",
                              "at least one flaw option must be chosen (NON counts)");
    }
}

inline void validate_record(const ImageRecord& r, int expected_redundancy = 5) {
    if (r.image_id.empty()) {
        throw ValidationError("", "image_id", "image_id must be nonempty");
    }
    if (r.source_task == SourceTask::vqa && (!r.question || trim(*r.question).empty())) {
        throw ValidationError(r.image_id, "question", "vqa records must carry a question");
    }
    if (expected_redundancy > 0 &&
        static_cast<int>(r.annotations.size()) != expected_redundancy) {
        throw ValidationError(r.image_id, "annotations",
                              "expected " + std::to_string(expected_redundancy) +
                                  " annotations, got " + std::to_string(r.annotations.size()));
    }
    for (const auto& a : r.annotations) validate_annotation(r.image_id, a);
}

// ---------------------------------------------------------------------------
// Quorum aggregation
// ---------------------------------------------------------------------------

struct AggregatedLabels {
    std::string image_id;
    bool unrecognizable = false;
    int unrecognizable_votes = 0;
    FlawLabelSet flaws;  // boolean form, other_texts not carried
    std::array<int, kFlawChannelCount> vote_counts{};
    int redundancy = 0;  // R = number of workers aggregated
};

// A label is valid iff at least `quorum` workers asserted it. Applies
// uniformly to unrecognizability and every flaw channel. Pure and
// permutation-invariant in the worker order.
inline AggregatedLabels aggregate(const ImageRecord& record, int quorum = 2) {
    if (quorum < 1) {
        throw InsufficientRedundancyError("quorum must be >= 1, got " + std::to_string(quorum));
    }
    const int r = static_cast<int>(record.annotations.size());
    if (r < quorum) {
        throw InsufficientRedundancyError(
            "image " + record.image_id + " has " + std::to_string(r) +
            " annotations but quorum is " + std::to_string(quorum));
    }
    AggregatedLabels out;
    out.image_id = record.image_id;
    out.redundancy = r;
    for (const auto& a : record.annotations) {
        if (a.unrecognizable) ++out.unrecognizable_votes;
        for (int i = 0; i < kFlawChannelCount; ++i) {
            if (a.flaws.values[static_cast<std::size_t>(i)]) {
                ++out.vote_counts[static_cast<std::size_t>(i)];
            }
        }
    }
    out.unrecognizable = out.unrecognizable_votes >= quorum;
    for (int i = 0; i < kFlawChannelCount; ++i) {
        out.flaws.values[static_cast<std::size_t>(i)] =
            out.vote_counts[static_cast<std::size_t>(i)] >= quorum;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Visual questions and the three-way reason class
// ---------------------------------------------------------------------------

enum class ReasonClass : int {
    Answerable = 0,
    Unrecognizable = 1,
    InsufficientContent = 2,
};

inline constexpr std::array<const char*, 3> kReasonNames = {
    "ANSWERABLE", "UNRECOGNIZABLE", "INSUFFICIENT_CONTENT"};

inline const char* reason_name(ReasonClass c) {
    return kReasonNames[static_cast<std::size_t>(c)];
}

inline std::optional<ReasonClass> reason_from_name(std::string_view s) {
    for (int i = 0; i < 3; ++i) {
        if (s == kReasonNames[static_cast<std::size_t>(i)]) return static_cast<ReasonClass>(i);
    }
    return std::nullopt;
}

// Three exclusive classes. An answerable question is never counted as
// unrecognizable: answerability wins and the unrecognizability bit is
// coerced to false in the emitted label.
inline ReasonClass derive_reason_class(bool answerable, bool unrecognizable) {
    if (answerable) return ReasonClass::Answerable;
    return unrecognizable ? ReasonClass::Unrecognizable : ReasonClass::InsufficientContent;
}

struct VisualQuestion {
    std::string image_id;
    std::string question;
    bool answerable = false;
    bool unrecognizable = false;  // already coerced when answerable
    ReasonClass reason_class = ReasonClass::InsufficientContent;
};

inline VisualQuestion make_visual_question(std::string image_id, std::string question,
                                           bool answerable, bool unrecognizable) {
    VisualQuestion q;
    q.image_id = std::move(image_id);
    q.question = std::move(question);
    q.answerable = answerable;
    q.unrecognizable = answerable ? false : unrecognizable;
    q.reason_class = derive_reason_class(answerable, unrecognizable);
    return q;
}

}  // namespace iqtk::data
