#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <set>
#include <vector>

#include "iqtk/curation.hpp"
#include "iqtk/rng.hpp"

using namespace iqtk;
using namespace iqtk::curation;

namespace {

data::AggregatedLabels vote_row(const std::string& id, int votes) {
    data::AggregatedLabels a;
    a.image_id = id;
    a.unrecognizable_votes = votes;
    a.unrecognizable = votes >= 2;
    a.flaws.values[7] = !a.unrecognizable;  // keep rows structurally valid
    a.flaws.values[0] = a.unrecognizable;
    a.redundancy = 5;
    return a;
}

SplitSpec standard_split(std::uint64_t seed) {
    SplitSpec s;
    s.ratios = {0.525, 0.375, 0.10};
    s.names = {"train", "val", "test"};
    s.seed = seed;
    return s;
}

}  // namespace

TEST_CASE("largest-remainder allocation is exact on exact targets", "[curation]") {
    const auto c = detail::allocate_counts(1000, {0.525, 0.375, 0.10});
    REQUIRE(c.size() == 3);
    CHECK(c[0] == 525);
    CHECK(c[1] == 375);
    CHECK(c[2] == 100);

    const auto d = detail::allocate_counts(10, {0.7, 0.2, 0.1});
    CHECK(d == std::vector<std::size_t>{7, 2, 1});
}

TEST_CASE("largest-remainder allocation settles fractional ties by index", "[curation]") {
    // 10 * 1/3 = 3.33 each; the one leftover goes to the first bucket
    const auto c = detail::allocate_counts(10, {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0});
    CHECK(c == std::vector<std::size_t>{4, 3, 3});
    // total always preserved
    for (std::size_t n : {1u, 7u, 99u, 1000u}) {
        const auto k = detail::allocate_counts(n, {0.5, 0.3, 0.2});
        CHECK(k[0] + k[1] + k[2] == n);
    }
}

TEST_CASE("split_indices partitions the index range with exact sizes", "[curation]") {
    const auto splits = split_indices(1000, standard_split(7));
    REQUIRE(splits.size() == 3);
    CHECK(splits[0].size() == 525);
    CHECK(splits[1].size() == 375);
    CHECK(splits[2].size() == 100);

    std::set<std::size_t> all;
    for (const auto& s : splits) {
        CHECK(std::is_sorted(s.begin(), s.end()));
        for (std::size_t i : s) {
            CHECK(all.insert(i).second);  // no index appears twice
        }
    }
    CHECK(all.size() == 1000);
    CHECK(*all.rbegin() == 999);
}

TEST_CASE("split_indices is deterministic in the seed", "[curation]") {
    const auto a = split_indices(500, standard_split(42));
    const auto b = split_indices(500, standard_split(42));
    CHECK(a == b);
    const auto c = split_indices(500, standard_split(43));
    CHECK(a != c);
}

TEST_CASE("stratified split keeps per-stratum proportions exact", "[curation]") {
    // two strata, sizes 400 and 600; all targets are integral
    std::vector<int> strata(1000);
    for (std::size_t i = 0; i < 1000; ++i) strata[i] = i < 400 ? 0 : 1;
    auto spec = standard_split(11);
    spec.stratified = true;
    const auto splits = split_indices(1000, spec, &strata);
    CHECK(splits[0].size() == 525);
    CHECK(splits[1].size() == 375);
    CHECK(splits[2].size() == 100);

    const std::vector<std::vector<std::size_t>> expect = {{210, 315}, {150, 225}, {40, 60}};
    for (std::size_t s = 0; s < 3; ++s) {
        std::size_t in0 = 0, in1 = 0;
        for (std::size_t i : splits[s]) (strata[i] == 0 ? in0 : in1)++;
        CHECK(in0 == expect[s][0]);
        CHECK(in1 == expect[s][1]);
    }
}

TEST_CASE("stratified split tolerates ragged strata within one item", "[curation]") {
    Rng rng(3);
    std::vector<int> strata(997);
    for (auto& s : strata) s = static_cast<int>(rng.below(5));
    auto spec = standard_split(5);
    spec.stratified = true;
    const auto splits = split_indices(997, spec, &strata);
    std::size_t total = 0;
    for (const auto& s : splits) total += s.size();
    CHECK(total == 997);
    // per-stratum count in each split within 1 of the stratum's exact target
    for (int stratum = 0; stratum < 5; ++stratum) {
        std::size_t stratum_n = 0;
        for (int s : strata)
            if (s == stratum) ++stratum_n;
        for (std::size_t s = 0; s < 3; ++s) {
            std::size_t got = 0;
            for (std::size_t i : splits[s])
                if (strata[i] == stratum) ++got;
            const double target = static_cast<double>(stratum_n) * spec.ratios[s];
            CHECK(std::abs(static_cast<double>(got) - target) <= 1.0);
        }
    }
}

TEST_CASE("split spec validation", "[curation]") {
    SplitSpec s;
    CHECK_THROWS_AS(validate_split_spec(s), InvalidSpecError);
    s.ratios = {0.6, 0.5};
    s.names = {"a", "b"};
    CHECK_THROWS_AS(validate_split_spec(s), InvalidSpecError);  // sums to 1.1
    s.ratios = {1.5, -0.5};
    CHECK_THROWS_AS(validate_split_spec(s), InvalidSpecError);  // negative
    s.ratios = {0.5, 0.5};
    CHECK_NOTHROW(validate_split_spec(s));
    s.names = {"a"};
    CHECK_THROWS_AS(validate_split_spec(s), InvalidSpecError);  // length mismatch

    std::vector<int> strata(9, 0);
    CHECK_THROWS_AS(split_indices(10, standard_split(1), &strata), InvalidSpecError);
    CHECK_THROWS_AS(split_indices(2, standard_split(1)), InvalidSpecError);  // n < k
}

TEST_CASE("cost savings at published scale", "[curation]") {
    const auto s = cost_savings(5802);
    CHECK(s.dollars == Catch::Approx(3829.32).margin(1e-9));
    CHECK(s.hours == Catch::Approx(5802.0 * 5.0 * 47.0 / 3600.0).margin(1e-9));
    CHECK(s.hours == Catch::Approx(378.7416667).margin(1e-6));
    // rounds to the headline figures
    CHECK(std::abs(s.dollars - 3829.0) < 0.5);
    CHECK(std::abs(s.hours - 379.0) < 0.5);
}

TEST_CASE("cost savings scales linearly and accepts custom models", "[curation]") {
    const auto one = cost_savings(1);
    CHECK(one.dollars == Catch::Approx(0.66).margin(1e-12));  // 5 * 0.132
    const auto ten = cost_savings(10);
    CHECK(ten.dollars == Catch::Approx(10.0 * one.dollars).margin(1e-9));
    CHECK(ten.hours == Catch::Approx(10.0 * one.hours).margin(1e-9));

    CostModel m;
    m.per_image_rate = 0.25;
    m.per_image_seconds = 60.0;
    m.redundancy = 3;
    const auto s = cost_savings(100, m);
    CHECK(s.dollars == Catch::Approx(75.0));
    CHECK(s.hours == Catch::Approx(5.0));

    const auto zero = cost_savings(0);
    CHECK(zero.dollars == 0.0);
    CHECK(zero.hours == 0.0);
}

TEST_CASE("cost savings rejects nonsense inputs", "[curation]") {
    CHECK_THROWS_AS(cost_savings(-1), InvalidSpecError);
    CostModel m;
    m.per_image_rate = 0.0;
    CHECK_THROWS_AS(cost_savings(5, m), InvalidSpecError);
    m = CostModel{};
    m.redundancy = 0;
    CHECK_THROWS_AS(cost_savings(5, m), InvalidSpecError);
    m = CostModel{};
    m.per_image_seconds = -1.0;
    CHECK_THROWS_AS(cost_savings(5, m), InvalidSpecError);
}

TEST_CASE("filter_predicted keeps strictly-below-threshold images in order", "[curation]") {
    const std::vector<std::string> ids{"a", "b", "c", "d", "e"};
    const std::vector<double> p{0.1, 0.5, 0.49, 0.9, 0.0};
    const auto m = filter_predicted(ids, p, 0.5, "ckpt:xyz");
    CHECK(m.selection_mode == SelectionMode::predicted_flag);
    CHECK(m.image_ids == std::vector<std::string>{"a", "c", "e"});  // 0.5 itself is dropped
    CHECK(m.provenance == "ckpt:xyz");

    CHECK_THROWS_AS(filter_predicted(ids, {0.1, 0.2}, 0.5, "x"), DimensionError);
}

TEST_CASE("perfect_flag removes worst-vote images first", "[curation]") {
    std::vector<data::AggregatedLabels> labels{vote_row("a", 5), vote_row("b", 3),
                                               vote_row("c", 0), vote_row("d", 0)};
    const auto m = perfect_flag(labels, 2);
    CHECK(m.image_ids == std::vector<std::string>{"c", "d"});
    CHECK(m.selection_mode == SelectionMode::perfect_flag);
}

TEST_CASE("perfect_flag breaks vote ties by ascending image id", "[curation]") {
    std::vector<data::AggregatedLabels> labels{vote_row("a", 5), vote_row("b", 5),
                                               vote_row("c", 2)};
    const auto m = perfect_flag(labels, 2);
    CHECK(m.image_ids == std::vector<std::string>{"b", "c"});
}

TEST_CASE("perfect_flag is invariant to input order", "[curation]") {
    std::vector<data::AggregatedLabels> labels;
    Rng rng(71);
    for (int i = 0; i < 30; ++i) {
        labels.push_back(vote_row("img" + std::to_string(100 + i),
                                  static_cast<int>(rng.below(6))));
    }
    const auto base = perfect_flag(labels, 12);
    for (int shuffle = 0; shuffle < 5; ++shuffle) {
        rng.shuffle(labels);
        CHECK(perfect_flag(labels, 12).image_ids == base.image_ids);
    }
    // keeping everything returns all ids
    CHECK(perfect_flag(labels, 30).image_ids.size() == 30);
    CHECK_THROWS_AS(perfect_flag(labels, 31), InvalidSpecError);
}

TEST_CASE("perfect_flag keeps the lowest-vote survivors", "[curation]") {
    std::vector<data::AggregatedLabels> labels;
    for (int i = 0; i < 20; ++i) labels.push_back(vote_row("z" + std::to_string(i), i % 6));
    const auto m = perfect_flag(labels, 8);
    // max vote among kept must be <= min vote among removed
    std::set<std::string> kept(m.image_ids.begin(), m.image_ids.end());
    int max_kept = -1, min_removed = 99;
    for (const auto& a : labels) {
        if (kept.count(a.image_id)) {
            max_kept = std::max(max_kept, a.unrecognizable_votes);
        } else {
            min_removed = std::min(min_removed, a.unrecognizable_votes);
        }
    }
    CHECK(max_kept <= min_removed);
}

TEST_CASE("random_sample is a seeded uniform subset", "[curation]") {
    std::vector<std::string> ids;
    for (int i = 0; i < 100; ++i) ids.push_back("im" + std::to_string(1000 + i));
    const auto a = random_sample(ids, 20, 42);
    CHECK(a.image_ids.size() == 20);
    CHECK(a.provenance == "seed:42");
    CHECK(a.selection_mode == SelectionMode::random_sample);
    std::set<std::string> uniq(a.image_ids.begin(), a.image_ids.end());
    CHECK(uniq.size() == 20);
    for (const auto& id : a.image_ids) {
        CHECK(std::find(ids.begin(), ids.end(), id) != ids.end());
    }
    // reproducible; a different seed moves the sample
    CHECK(random_sample(ids, 20, 42).image_ids == a.image_ids);
    CHECK(random_sample(ids, 20, 43).image_ids != a.image_ids);
    CHECK_THROWS_AS(random_sample(ids, 101, 1), InvalidSpecError);
}

TEST_CASE("manifests survive a JSON round trip", "[curation]") {
    const auto m = full_manifest({"x", "y", "z"});
    const auto j = manifest_to_json(m);
    CHECK(j["N"] == 3);
    const auto back = manifest_from_json(j);
    CHECK(back.selection_mode == m.selection_mode);
    CHECK(back.image_ids == m.image_ids);
    CHECK(back.provenance == m.provenance);

    auto bad = j;
    bad["N"] = 7;
    CHECK_THROWS_AS(manifest_from_json(bad), SchemaError);
    bad = j;
    bad["selection_mode"] = "oracle";
    CHECK_THROWS_AS(manifest_from_json(bad), ParseError);
}

TEST_CASE("selection mode names round-trip", "[curation]") {
    for (auto m : {SelectionMode::full, SelectionMode::predicted_flag,
                   SelectionMode::perfect_flag, SelectionMode::random_sample}) {
        const auto back = selection_mode_from_name(selection_mode_name(m));
        REQUIRE(back);
        CHECK(*back == m);
    }
    CHECK_FALSE(selection_mode_from_name("captioned"));
}

TEST_CASE("results csv parses metric columns", "[curation]") {
    const std::string text =
        "model,selection_mode,bleu4,cider\r\n"
        "sat,full,0.31,0.92\n"
        "sat,predicted_flag,0.33,0.97\n"
        "\n";
    const auto rows = parse_results_csv(text);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].model == "sat");
    CHECK(rows[0].selection_mode == "full");
    CHECK(rows[0].metrics.at("bleu4") == 0.31);
    CHECK(rows[1].metrics.at("cider") == 0.97);
}

TEST_CASE("results csv rejects malformed input", "[curation]") {
    CHECK_THROWS_AS(parse_results_csv(""), ParseError);
    CHECK_THROWS_AS(parse_results_csv("model,mode,x\na,b,1\n"), ParseError);
    CHECK_THROWS_AS(parse_results_csv("model,selection_mode\na,b\n"), ParseError);
    CHECK_THROWS_AS(
        parse_results_csv("model,selection_mode,x\na,full\n"), ParseError);  // short row
    CHECK_THROWS_AS(
        parse_results_csv("model,selection_mode,x\na,full,oops\n"), ParseError);
}

TEST_CASE("compare_manifests joins manifests with result rows", "[curation]") {
    std::vector<TrainingManifest> manifests;
    manifests.push_back(full_manifest({"a", "b", "c"}));
    manifests.push_back(filter_predicted({"a", "b", "c"}, {0.1, 0.9, 0.2}, 0.5, "ck"));
    const auto results = parse_results_csv(
        "model,selection_mode,cider\n"
        "sat,full,0.9\n"
        "sat,predicted_flag,0.95\n");
    const auto table = compare_manifests(manifests, results);
    REQUIRE(table["rows"].size() == 2);
    CHECK(table["rows"][0]["N"] == 3);
    CHECK(table["rows"][1]["N"] == 2);
    CHECK(table["rows"][1]["metrics"]["cider"] == 0.95);

    // a manifest whose mode has no result row is an error
    manifests.push_back(random_sample({"a", "b", "c"}, 2, 1));
    CHECK_THROWS_AS(compare_manifests(manifests, results), JoinError);
}
