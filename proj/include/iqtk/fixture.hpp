#pragma once

// On-disk fixture corpora: synthetic images plus annotation/question files in
// the toolkit's interchange formats. Lets the CLI and the end-to-end tests
// exercise ingest -> aggregate -> stats -> filter -> cost on real files
// without shipping any photographs.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/imgcodecs.hpp>

#include "iqtk/annotation_io.hpp"
#include "iqtk/labels.hpp"
#include "iqtk/synthetic.hpp"

namespace iqtk::fixture {

using data::FlawChannel;
using data::FlawLabelSet;
using data::ImageRecord;
using data::SourceTask;
using data::WorkerAnnotation;

struct FixtureCorpus {
    std::string root;              // directory everything lives under
    std::string annotations_path;  // <root>/annotations.json
    std::string questions_path;    // <root>/questions.json
    int n_images = 0;
    int n_unrecognizable = 0;  // by construction (3+ workers assert it)
};

namespace detail {

// Deterministic per-image ground truth. Every 4th image is wrecked beyond
// recognition; the rest draw independent blur/exposure corruptions.
struct GroundTruth {
    cv::Mat image;
    FlawLabelSet flaws;
    bool unrecognizable = false;
};

inline GroundTruth make_ground_truth(int i, std::uint64_t seed, Rng& rng) {
    synthetic::SceneSpec spec;
    spec.seed = seed + static_cast<std::uint64_t>(i) * 1099511628211ULL;
    GroundTruth g;
    cv::Mat img = synthetic::render_scene(spec);
    if (i % 4 == 3) {
        img = synthetic::apply_exposure(synthetic::apply_blur(img, 6.0), -70.0);
        g.unrecognizable = true;
        g.flaws.set(FlawChannel::Blur, true);
        g.flaws.set(FlawChannel::Dark, true);
    } else {
        if (rng.bernoulli(0.45)) {
            img = synthetic::apply_blur(img, 5.0);
            g.flaws.set(FlawChannel::Blur, true);
        }
        const int exposure = static_cast<int>(rng.below(3));
        if (exposure == 1) {
            img = synthetic::apply_exposure(img, 110.0);
            g.flaws.set(FlawChannel::Bright, true);
        } else if (exposure == 2) {
            img = synthetic::apply_exposure(img, -110.0);
            g.flaws.set(FlawChannel::Dark, true);
        }
        if (!g.flaws.any()) g.flaws.set(FlawChannel::None, true);
    }
    g.image = img;
    return g;
}

// Crowd vote synthesis: the first `agree` workers report the ground truth,
// the rest dissent with a NON-only annotation. A stray below-quorum flaw vote
// lands on one truth-asserting worker every 5th image so aggregation has
// minority opinions to discard.
inline std::vector<WorkerAnnotation> make_votes(int i, const GroundTruth& g) {
    const int agree = 3 + (i % 2);  // 3 or 4 of 5
    std::vector<WorkerAnnotation> out;
    for (int w = 0; w < 5; ++w) {
        WorkerAnnotation a;
        a.worker_id = "w" + std::to_string(w);
        if (w < agree) {
            a.flaws = g.flaws;
            a.unrecognizable = g.unrecognizable;
            a.caption = g.unrecognizable ? data::kUnrecognizableSentinel
                                         : "a synthetic scene of flat shapes";
            if (w == agree - 1 && i % 5 == 0 && !g.unrecognizable) {
                a.flaws.set(FlawChannel::Framing, true);  // single vote, below quorum
            }
        } else if (g.unrecognizable) {
            // dissenter on a wrecked image: sees the flaws, still captions it
            a.flaws = g.flaws;
            a.unrecognizable = false;
            a.caption = "a very dark and blurry frame";
        } else {
            a.flaws.set(FlawChannel::None, true);
            a.unrecognizable = false;
            a.caption = "a clean photo of simple shapes";
        }
        out.push_back(std::move(a));
    }
    return out;
}

inline std::string question_for(int i, bool unrecognizable) {
    static const std::array<const char*, 4> answerable = {
        "what color is the large shape",
        "how many circles are in the photo",
        "is the background light or dark",
        "what kind of shape sits in the corner",
    };
    static const std::array<const char*, 4> insufficient = {
        "when does this coupon expire",
        "what is printed on the back of this card",
        "when was this carton first opened",
        "does the other side list allergy warnings",
    };
    // Wrecked images alternate pools so the question text alone cannot
    // predict the label.
    if (unrecognizable) {
        return (i / 4) % 2 == 0 ? answerable[static_cast<std::size_t>(i % 4)]
                                : insufficient[static_cast<std::size_t>(i % 4)];
    }
    return i % 2 == 0 ? answerable[static_cast<std::size_t>((i / 2) % 4)]
                      : insufficient[static_cast<std::size_t>((i / 2) % 4)];
}

}  // namespace detail

// Writes n images plus annotations.json / questions.json under dir. Fully
// deterministic in (n, seed); rewrites are byte-identical.
inline FixtureCorpus write_fixture_corpus(const std::string& dir, int n, std::uint64_t seed) {
    if (n < 4) throw InvalidSpecError("fixture corpus: need at least 4 images");
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "images");

    Rng rng(seed);
    FixtureCorpus c;
    c.root = dir;
    c.n_images = n;

    std::vector<ImageRecord> records;
    std::vector<data::QuestionEntry> questions;
    records.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const auto g = detail::make_ground_truth(i, seed, rng);
        if (g.unrecognizable) ++c.n_unrecognizable;

        const std::string image_id = "fx" + std::to_string(i);
        const std::string rel_uri = "images/" + image_id + ".png";
        if (!cv::imwrite((fs::path(dir) / rel_uri).string(), g.image)) {
            throw ConfigError("fixture corpus: cannot write " + rel_uri);
        }

        ImageRecord r;
        r.image_id = image_id;
        r.uri = rel_uri;
        r.source_task = i % 2 == 0 ? SourceTask::captioning : SourceTask::vqa;
        const std::string q = detail::question_for(i, g.unrecognizable);
        if (r.source_task == SourceTask::vqa) r.question = q;
        r.annotations = detail::make_votes(i, g);
        records.push_back(std::move(r));

        data::QuestionEntry entry;
        entry.image_id = image_id;
        entry.question = q;
        // Answerable only when the image survived and the question pool is
        // the visual one; unrecognizable is left to the label join.
        entry.answerable = !g.unrecognizable && i % 2 == 0;
        questions.push_back(std::move(entry));
    }

    c.annotations_path = (fs::path(dir) / "annotations.json").string();
    c.questions_path = (fs::path(dir) / "questions.json").string();
    data::write_annotation_file(c.annotations_path, records);
    data::write_question_file(c.questions_path, questions);
    return c;
}

}  // namespace iqtk::fixture
