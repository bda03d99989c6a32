#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "iqtk/annotation_io.hpp"
#include "iqtk/labels.hpp"
#include "iqtk/rng.hpp"

using namespace iqtk;
using namespace iqtk::data;

namespace {

WorkerAnnotation make_worker(const std::string& id, bool unrec,
                             std::initializer_list<FlawChannel> flaws) {
    WorkerAnnotation a;
    a.worker_id = id;
    a.caption = unrec ? kUnrecognizableSentinel : "a cat on a sofa.";
    a.unrecognizable = unrec;
    for (auto c : flaws) a.flaws.set(c, true);
    if (!a.flaws.any()) a.flaws.set(FlawChannel::None, true);
    return a;
}

ImageRecord make_record(const std::string& id, const std::vector<bool>& unrec_votes) {
    ImageRecord r;
    r.image_id = id;
    r.uri = id + ".png";
    r.source_task = SourceTask::captioning;
    for (std::size_t i = 0; i < unrec_votes.size(); ++i) {
        r.annotations.push_back(
            make_worker("w" + std::to_string(i), unrec_votes[i], {FlawChannel::None}));
    }
    return r;
}

std::filesystem::path temp_dir() {
    auto dir = std::filesystem::temp_directory_path() / "iqtk_labels_test";
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("quorum aggregation follows the at-least-two rule", "[labels]") {
    CHECK(aggregate(make_record("a", {true, true, false, false, false})).unrecognizable);
    CHECK_FALSE(aggregate(make_record("b", {true, false, false, false, false})).unrecognizable);
    CHECK_FALSE(aggregate(make_record("c", {false, false, false, false, false})).unrecognizable);
    CHECK(aggregate(make_record("d", {true, true, true, true, true})).unrecognizable);
}

TEST_CASE("aggregation is exhaustive over all 2^5 patterns at quorum 2", "[labels]") {
    for (int mask = 0; mask < 32; ++mask) {
        std::vector<bool> votes;
        int n_true = 0;
        for (int i = 0; i < 5; ++i) {
            const bool v = (mask >> i) & 1;
            votes.push_back(v);
            if (v) ++n_true;
        }
        const auto agg = aggregate(make_record("m" + std::to_string(mask), votes), 2);
        CHECK(agg.unrecognizable == (n_true >= 2));
        CHECK(agg.unrecognizable_votes == n_true);
        // flaw channel quorum follows the same rule; NON is voted by everyone here
        CHECK(agg.flaws[FlawChannel::None]);
    }
}

TEST_CASE("aggregation quorum boundary across quorum values", "[labels]") {
    for (int quorum = 1; quorum <= 5; ++quorum) {
        auto rec_below = make_record("b", std::vector<bool>(5, false));
        for (int i = 0; i < quorum - 1; ++i) rec_below.annotations[i].unrecognizable = true;
        for (auto& a : rec_below.annotations) {
            if (a.unrecognizable) a.caption = kUnrecognizableSentinel;
        }
        CHECK_FALSE(aggregate(rec_below, quorum).unrecognizable);

        auto rec_at = make_record("a", std::vector<bool>(5, false));
        for (int i = 0; i < quorum; ++i) rec_at.annotations[i].unrecognizable = true;
        CHECK(aggregate(rec_at, quorum).unrecognizable);
    }
}

TEST_CASE("aggregation is monotone and permutation-invariant", "[labels]") {
    Rng rng(2024);
    for (int trial = 0; trial < 200; ++trial) {
        ImageRecord r;
        r.image_id = "t" + std::to_string(trial);
        r.source_task = SourceTask::captioning;
        for (int w = 0; w < 5; ++w) {
            WorkerAnnotation a;
            a.worker_id = "w" + std::to_string(w);
            a.unrecognizable = rng.bernoulli(0.3);
            a.caption = a.unrecognizable ? kUnrecognizableSentinel : "stuff on a table.";
            for (int c = 0; c < kFlawChannelCount; ++c) {
                a.flaws.values[static_cast<std::size_t>(c)] = rng.bernoulli(0.4);
            }
            if (!a.flaws.any()) a.flaws.set(FlawChannel::None, true);
            r.annotations.push_back(a);
        }
        const auto base = aggregate(r);

        // adding one true vote never flips any label true -> false
        ImageRecord more = r;
        const int w = static_cast<int>(rng.below(5));
        const int c = static_cast<int>(rng.below(kFlawChannelCount));
        more.annotations[static_cast<std::size_t>(w)].flaws.values[static_cast<std::size_t>(c)] =
            true;
        const auto bumped = aggregate(more);
        for (int i = 0; i < kFlawChannelCount; ++i) {
            if (base.flaws.values[static_cast<std::size_t>(i)]) {
                CHECK(bumped.flaws.values[static_cast<std::size_t>(i)]);
            }
        }
        CHECK((!base.unrecognizable || bumped.unrecognizable));

        // worker order never changes the result
        ImageRecord shuffled = r;
        rng.shuffle(shuffled.annotations);
        const auto agg2 = aggregate(shuffled);
        CHECK(agg2.unrecognizable == base.unrecognizable);
        CHECK(agg2.flaws.values == base.flaws.values);
        CHECK(agg2.vote_counts == base.vote_counts);
    }
}

TEST_CASE("aggregation rejects insufficient redundancy", "[labels]") {
    CHECK_THROWS_AS(aggregate(make_record("a", {true}), 2), InsufficientRedundancyError);
    CHECK_THROWS_AS(aggregate(make_record("a", {true, true}), 0), InsufficientRedundancyError);
}

TEST_CASE("reason class derivation and the manual-assignment rule", "[labels]") {
    CHECK(derive_reason_class(true, true) == ReasonClass::Answerable);
    CHECK(derive_reason_class(true, false) == ReasonClass::Answerable);
    CHECK(derive_reason_class(false, true) == ReasonClass::Unrecognizable);
    CHECK(derive_reason_class(false, false) == ReasonClass::InsufficientContent);

    // stored unrecognizable coerced false when answerable
    const auto q = make_visual_question("img", "what is this?", true, true);
    CHECK(q.reason_class == ReasonClass::Answerable);
    CHECK_FALSE(q.unrecognizable);
}

TEST_CASE("reason classes partition any label set", "[labels]") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        int counts[3] = {0, 0, 0};
        const int n = 1 + static_cast<int>(rng.below(40));
        for (int i = 0; i < n; ++i) {
            const auto q = make_visual_question("i" + std::to_string(i), "q?",
                                                rng.bernoulli(0.5), rng.bernoulli(0.5));
            ++counts[static_cast<int>(q.reason_class)];
        }
        CHECK(counts[0] + counts[1] + counts[2] == n);
    }
}

TEST_CASE("parse_annotation_file accepts a minimal valid file", "[labels]") {
    const auto dir = temp_dir();
    const auto path = (dir / "ok.json").string();
    {
        json root = json::array();
        ImageRecord r = make_record("img0", {true, true, false, false, false});
        root.push_back(record_to_json(r));
        std::ofstream out(path);
        out << root.dump(2);
    }
    const auto records = parse_annotation_file(path);
    REQUIRE(records.size() == 1);
    CHECK(records[0].image_id == "img0");
    CHECK(records[0].annotations.size() == 5);
}

TEST_CASE("parse_annotation_file reports invariant violations with context", "[labels]") {
    const auto dir = temp_dir();

    SECTION("empty caption") {
        const auto path = (dir / "empty_caption.json").string();
        ImageRecord r = make_record("imgX", {false, false, false, false, false});
        r.annotations[2].caption = "";
        std::ofstream(path) << json::array({record_to_json(r)}).dump();
        try {
            parse_annotation_file(path);
            FAIL("expected ValidationError");
        } catch (const ValidationError& e) {
            CHECK(e.image_id() == "imgX");
            CHECK(e.field() == "caption");
        }
    }

    SECTION("unrecognizable without sentinel caption") {
        const auto path = (dir / "bad_sentinel.json").string();
        ImageRecord r = make_record("imgY", {false, false, false, false, false});
        r.annotations[0].unrecognizable = true;  // caption stays ordinary
        std::ofstream(path) << json::array({record_to_json(r)}).dump();
        CHECK_THROWS_AS(parse_annotation_file(path), ValidationError);
    }

    SECTION("sentinel caption with trailing extra sentence is rejected") {
        const auto path = (dir / "sentinel_extra.json").string();
        ImageRecord r = make_record("imgZ", {false, false, false, false, false});
        r.annotations[0].caption =
            std::string(kUnrecognizableSentinel) + " Also there is a dog.";
        std::ofstream(path) << json::array({record_to_json(r)}).dump();
        CHECK_THROWS_AS(parse_annotation_file(path), ValidationError);
    }

    SECTION("no flaw option chosen") {
        const auto path = (dir / "no_flaws.json").string();
        ImageRecord r = make_record("imgW", {false, false, false, false, false});
        r.annotations[1].flaws = FlawLabelSet{};
        std::ofstream(path) << json::array({record_to_json(r)}).dump();
        CHECK_THROWS_AS(parse_annotation_file(path), ValidationError);
    }

    SECTION("duplicate image ids") {
        const auto path = (dir / "dup_ids.json").string();
        ImageRecord r = make_record("same", {false, false, false, false, false});
        std::ofstream(path) << json::array({record_to_json(r), record_to_json(r)}).dump();
        CHECK_THROWS_AS(parse_annotation_file(path), ValidationError);
    }

    SECTION("vqa record without question") {
        const auto path = (dir / "vqa_noq.json").string();
        ImageRecord r = make_record("v0", {false, false, false, false, false});
        r.source_task = SourceTask::vqa;
        std::ofstream(path) << json::array({record_to_json(r)}).dump();
        CHECK_THROWS_AS(parse_annotation_file(path), ValidationError);
    }
}

TEST_CASE("malformed JSON yields a parse error with line context", "[labels]") {
    const auto dir = temp_dir();
    const auto path = (dir / "broken.json").string();
    std::ofstream(path) << "[\n  {\"image_id\": \"a\",\n  broken\n]";
    try {
        parse_annotation_file(path);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        const std::string msg = e.what();
        CHECK(msg.find(":3:") != std::string::npos);  // error on line 3
    }
}

TEST_CASE("sentinel matching trims surrounding whitespace only", "[labels]") {
    WorkerAnnotation a;
    a.worker_id = "w";
    a.caption = std::string("  ") + kUnrecognizableSentinel + "\n";
    a.unrecognizable = true;
    a.flaws.set(FlawChannel::Blur, true);
    CHECK_NOTHROW(validate_annotation("img", a));
}

TEST_CASE("annotation round-trips through JSON", "[labels]") {
    ImageRecord r = make_record("rt", {true, true, false, false, false});
    r.source_task = SourceTask::vqa;
    r.question = "what color is the mug?";
    r.annotations[3].flaws.set(FlawChannel::Other, true);
    r.annotations[3].flaws.other_texts = {"sticker covers the label"};
    const auto j = record_to_json(r);
    const auto back = record_from_json(j);
    CHECK(back.image_id == r.image_id);
    CHECK(back.question == r.question);
    CHECK(back.annotations[3].flaws.other_texts == r.annotations[3].flaws.other_texts);
    CHECK(back.annotations[1].unrecognizable == r.annotations[1].unrecognizable);
}

TEST_CASE("aggregated labels round-trip through files", "[labels]") {
    const auto dir = temp_dir();
    const auto path = (dir / "agg.json").string();
    std::vector<AggregatedLabels> labels;
    labels.push_back(aggregate(make_record("a", {true, true, false, false, false})));
    labels.push_back(aggregate(make_record("b", {false, false, false, false, false})));
    write_aggregated_file(path, labels);
    const auto back = read_aggregated_file(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].image_id == "a");
    CHECK(back[0].unrecognizable);
    CHECK(back[0].unrecognizable_votes == 2);
    CHECK(back[1].redundancy == 5);
}

TEST_CASE("question join failures list the missing ids", "[labels]") {
    std::vector<QuestionEntry> qs;
    qs.push_back({"present", "what is it?", true, std::nullopt});
    qs.push_back({"absent", "how many?", false, std::nullopt});
    std::vector<AggregatedLabels> labels;
    labels.push_back(aggregate(make_record("present", {false, false, false, false, false})));
    try {
        build_visual_questions(qs, labels);
        FAIL("expected JoinError");
    } catch (const JoinError& e) {
        REQUIRE(e.missing_ids().size() == 1);
        CHECK(e.missing_ids()[0] == "absent");
    }
}
