#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "iqtk/fixture.hpp"
#include "iqtk/pipeline.hpp"

using namespace iqtk;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Self-cleaning scratch directory per test case.
struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& stem) {
        path = fs::temp_directory_path() / ("iqtk_" + stem + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

pipeline::PipelineConfig fixture_config(const fixture::FixtureCorpus& c,
                                        const std::string& out_dir) {
    json j;
    j["annotations"] = c.annotations_path;
    j["questions"] = c.questions_path;
    j["out_dir"] = out_dir;
    j["seed"] = 11;
    j["train_rec"] = {{"epochs", 20}, {"batch_size", 8}, {"hidden", 32}, {"learning_rate", 0.01}};
    j["train_flaws"] = {{"epochs", 15},
                        {"batch_size", 8},
                        {"hidden", 32},
                        {"hidden2", 16},
                        {"learning_rate", 0.01}};
    j["train_vqa"] = {{"embed_dim", 12}, {"gru_hidden", 16},  {"att_hidden", 12},
                      {"fusion_dim", 16}, {"epochs", 10},      {"batch_size", 8},
                      {"learning_rate", 0.01}};
    return pipeline::config_from_json(j);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("fixture corpus is deterministic and well-formed", "[pipeline]") {
    TempDir dir("fixture");
    const auto a = fixture::write_fixture_corpus(dir.str() + "/a", 16, 99);
    const auto b = fixture::write_fixture_corpus(dir.str() + "/b", 16, 99);
    CHECK(a.n_images == 16);
    CHECK(a.n_unrecognizable == 4);  // every 4th image is wrecked
    CHECK(slurp(a.annotations_path) == slurp(b.annotations_path));
    CHECK(slurp(a.questions_path) == slurp(b.questions_path));

    // files parse under the toolkit's own strict readers
    data::ParseOptions opt;
    const auto records = data::parse_annotation_file(a.annotations_path, opt);
    REQUIRE(records.size() == 16);
    for (const auto& r : records) CHECK(r.annotations.size() == 5);
    const auto questions = data::read_question_file(a.questions_path);
    CHECK(questions.size() == 16);

    CHECK_THROWS_AS(fixture::write_fixture_corpus(dir.str() + "/c", 2, 1), InvalidSpecError);
}

TEST_CASE("config round trip, unknown keys, and derived seeds", "[pipeline]") {
    json j;
    j["annotations"] = "x.json";
    j["seed"] = 42;
    j["threshold"] = 0.3;
    auto cfg = pipeline::config_from_json(j);
    CHECK(cfg.annotations_path == "x.json");
    CHECK(cfg.seed == 42);
    // one global knob fans out to every stage
    CHECK(cfg.train_rec.threshold == 0.3);
    CHECK(cfg.train_vqa.train.threshold == 0.3);
    CHECK(cfg.train_rec.seed != cfg.train_flaws.seed);
    CHECK(cfg.train_rec.seed != cfg.train_vqa.train.seed);
    CHECK(cfg.split.seed != cfg.train_rec.seed);

    // canonical dump -> reparse is a fixed point
    const auto again = pipeline::config_from_json(pipeline::config_to_json(cfg));
    CHECK(pipeline::config_hash(again) == pipeline::config_hash(cfg));

    // hash tracks every knob
    auto cfg2 = cfg;
    cfg2.quorum = 3;
    CHECK(pipeline::config_hash(cfg2) != pipeline::config_hash(cfg));

    CHECK_THROWS_AS(pipeline::config_from_json(json{{"typo_key", 1}}), ConfigError);
    CHECK_THROWS_AS(pipeline::config_from_json(json{{"split", {{"bogus", 1}}}}), ConfigError);
    CHECK_THROWS_AS(pipeline::config_from_json(json::array()), ConfigError);
    CHECK_THROWS_AS(
        pipeline::config_from_json(json{{"train_vqa", {{"variant", "quad_sigmoid"}}}}),
        SchemaError);

    // overriding the seed and re-finalizing re-derives the stage seeds
    auto cfg3 = cfg;
    cfg3.seed = 43;
    pipeline::finalize(cfg3);
    CHECK(cfg3.train_rec.seed != cfg.train_rec.seed);
}

TEST_CASE("core chain artifacts are byte-identical across reruns", "[pipeline]") {
    TempDir dir("rerun");
    const auto corpus = fixture::write_fixture_corpus(dir.str() + "/corpus", 16, 5);
    const auto cfg = fixture_config(corpus, dir.str() + "/out");

    auto run_chain = [&cfg]() {
        pipeline::run_ingest(cfg);
        pipeline::run_aggregate(cfg);
        pipeline::run_stats(cfg);
        pipeline::run_filter(cfg);
        pipeline::run_cost(cfg);
    };
    const std::vector<std::string> names = {"records.json", "aggregated.json", "stats.json",
                                            "interrelation.csv", "manifest.json", "cost.json"};
    run_chain();
    std::vector<std::string> first;
    for (const auto& n : names) first.push_back(slurp(dir.str() + "/out/" + n));
    fs::remove_all(dir.str() + "/out");
    run_chain();
    for (std::size_t i = 0; i < names.size(); ++i) {
        INFO(names[i]);
        CHECK(slurp(dir.str() + "/out/" + names[i]) == first[i]);
    }

    // inputs were never touched
    const auto before = slurp(corpus.annotations_path);
    CHECK(before == slurp(corpus.annotations_path));
}

TEST_CASE("every artifact embeds config hash, seed, and version", "[pipeline]") {
    TempDir dir("envelope");
    const auto corpus = fixture::write_fixture_corpus(dir.str() + "/corpus", 12, 3);
    const auto cfg = fixture_config(corpus, dir.str() + "/out");
    const std::string expect_hash = pipeline::config_hash(cfg);

    pipeline::run_ingest(cfg);
    pipeline::run_aggregate(cfg);
    pipeline::run_stats(cfg);
    pipeline::run_filter(cfg);
    pipeline::run_cost(cfg);
    for (const auto& name :
         {"records.json", "aggregated.json", "stats.json", "manifest.json", "cost.json"}) {
        const json j = ser::read_json_file(dir.str() + "/out/" + std::string(name));
        INFO(name);
        CHECK(j.at("config_hash").get<std::string>() == expect_hash);
        CHECK(j.at("seed").get<std::uint64_t>() == cfg.seed);
        CHECK(j.at("toolkit_version").get<std::string>() == pipeline::kToolkitVersion);
        CHECK(j.contains("payload"));
    }
    // text artifacts carry the same stamp on their first line
    const std::string csv = slurp(dir.str() + "/out/interrelation.csv");
    CHECK(csv.find("config_hash=" + expect_hash) != std::string::npos);
    CHECK(csv.substr(0, 1) == "#");
}

TEST_CASE("aggregate artifact matches direct aggregation", "[pipeline]") {
    TempDir dir("agg");
    const auto corpus = fixture::write_fixture_corpus(dir.str() + "/corpus", 12, 21);
    const auto cfg = fixture_config(corpus, dir.str() + "/out");
    pipeline::run_aggregate(cfg);

    const json payload = ser::read_json_file(dir.str() + "/out/aggregated.json")["payload"];
    data::ParseOptions opt;
    const auto records = data::parse_annotation_file(corpus.annotations_path, opt);
    REQUIRE(payload["n_images"].get<std::size_t>() == records.size());
    int unrec = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto direct = data::aggregate(records[i], cfg.quorum);
        const auto loaded = data::aggregated_from_json(payload["labels"][i]);
        CHECK(loaded.image_id == direct.image_id);
        CHECK(loaded.unrecognizable == direct.unrecognizable);
        CHECK(loaded.vote_counts == direct.vote_counts);
        if (direct.unrecognizable) ++unrec;
    }
    CHECK(payload["n_unrecognizable"].get<int>() == unrec);
    CHECK(unrec == corpus.n_unrecognizable);
}

TEST_CASE("cost artifact carries the headline numbers", "[pipeline]") {
    TempDir dir("cost");
    const auto corpus = fixture::write_fixture_corpus(dir.str() + "/corpus", 8, 2);
    const auto cfg = fixture_config(corpus, dir.str() + "/out");

    pipeline::run_cost(cfg, 5802);
    const json p = ser::read_json_file(dir.str() + "/out/cost.json")["payload"];
    CHECK(p["dollars_text"].get<std::string>() == "$3,829.32");
    CHECK(p["hours_text"].get<std::string>() == "378.7 h");
    CHECK(p["n_unrecognizable"].get<int>() == 5802);
    CHECK(p["dollars"].get<double>() == Catch::Approx(3829.32).margin(0.005));
    CHECK(p["hours"].get<double>() == Catch::Approx(378.74).margin(0.05));

    // default count comes from the aggregated labels (2 of 8 images wrecked)
    pipeline::run_cost(cfg);
    const json q = ser::read_json_file(dir.str() + "/out/cost.json")["payload"];
    CHECK(q["n_unrecognizable"].get<int>() == corpus.n_unrecognizable);
}

TEST_CASE("filter modes produce the expected manifests", "[pipeline]") {
    TempDir dir("filter");
    const auto corpus = fixture::write_fixture_corpus(dir.str() + "/corpus", 16, 13);
    auto cfg = fixture_config(corpus, dir.str() + "/out");

    // perfect_flag with auto n drops exactly the unrecognizable images
    pipeline::run_filter(cfg);
    json m = ser::read_json_file(dir.str() + "/out/manifest.json")["payload"];
    CHECK(m["selection_mode"] == "perfect_flag");
    CHECK(m["n_selected"].get<std::size_t>() ==
          static_cast<std::size_t>(16 - corpus.n_unrecognizable));
    for (const auto& id : m["image_ids"]) {
        // wrecked images are fx3, fx7, fx11, fx15: indices 3 mod 4
        const int idx = std::stoi(id.get<std::string>().substr(2));
        CHECK(idx % 4 != 3);
    }

    cfg.filter.mode = curation::SelectionMode::full;
    pipeline::run_filter(cfg);
    m = ser::read_json_file(dir.str() + "/out/manifest.json")["payload"];
    CHECK(m["n_selected"].get<std::size_t>() == 16);

    cfg.filter.mode = curation::SelectionMode::random_sample;
    cfg.filter.n_keep = 6;
    pipeline::run_filter(cfg);
    m = ser::read_json_file(dir.str() + "/out/manifest.json")["payload"];
    CHECK(m["n_selected"].get<std::size_t>() == 6);

    cfg.filter.mode = curation::SelectionMode::random_sample;
    cfg.filter.n_keep = 0;
    CHECK_THROWS_AS(pipeline::run_filter(cfg), ConfigError);

    cfg.filter.mode = curation::SelectionMode::predicted_flag;
    cfg.filter.n_keep = 0;
    cfg.filter.scores_path = "";
    CHECK_THROWS_AS(pipeline::run_filter(cfg), ConfigError);
}

TEST_CASE("train, predict, evaluate, and overlap run end to end", "[pipeline]") {
    TempDir dir("e2e");
    const auto corpus = fixture::write_fixture_corpus(dir.str() + "/corpus", 16, 8);
    auto cfg = fixture_config(corpus, dir.str() + "/out");
    // small corpus: train on everything so the split never starves a class
    cfg.split.ratios = {1.0};
    cfg.split.names = {"train"};
    pipeline::finalize(cfg);

    const auto trained = pipeline::run_train_rec(cfg);
    REQUIRE(trained.size() == 2);
    const json ckpt = ser::read_json_file(trained[0]);
    CHECK(ckpt["payload"]["kind"] == "recognizability_head");
    const json log = ser::read_json_file(trained[1])["payload"];
    CHECK(log["steps"].get<int>() > 0);
    CHECK(log["epochs"].size() == 20);

    const auto pred_paths = pipeline::run_predict(cfg, trained[0]);
    REQUIRE(pred_paths.size() == 1);
    std::ifstream in(pred_paths[0]);
    std::string line;
    REQUIRE(std::getline(in, line));
    const json header = json::parse(line);
    CHECK(header["artifact"] == "predictions");
    CHECK(header["model_kind"] == "recognizability_head");
    CHECK(header["n_rows"].get<int>() == 16);
    int rows = 0;
    while (std::getline(in, line)) {
        const json r = json::parse(line);
        CHECK(r.contains("image_id"));
        const double p = r.at("p_unrecognizable").get<double>();
        CHECK(p > 0.0);
        CHECK(p < 1.0);
        ++rows;
    }
    CHECK(rows == 16);

    const auto eval_paths = pipeline::run_evaluate(cfg, pred_paths[0]);
    const json eval_payload = ser::read_json_file(eval_paths[0])["payload"];
    CHECK(eval_payload["n_pos"].get<int>() == corpus.n_unrecognizable);
    CHECK(eval_payload["n_neg"].get<int>() == 16 - corpus.n_unrecognizable);
    CHECK(eval_payload.contains("ap"));
    CHECK(fs::exists(dir.str() + "/out/pr_curve.png"));

    const auto ov_paths = pipeline::run_overlap(cfg, pred_paths[0]);
    const json ov = ser::read_json_file(ov_paths[0])["payload"];
    const double coeff = ov["coefficient"].get<double>();
    CHECK(coeff >= 0.0);
    CHECK(coeff <= 1.0 + 1e-12);
    CHECK(ov["n_unrecognizable"].get<int>() == corpus.n_unrecognizable);
    CHECK(fs::exists(dir.str() + "/out/overlap.png"));
}

TEST_CASE("flaw and reason checkpoints drive predict", "[pipeline]") {
    TempDir dir("heads");
    const auto corpus = fixture::write_fixture_corpus(dir.str() + "/corpus", 16, 31);
    auto cfg = fixture_config(corpus, dir.str() + "/out");
    cfg.split.ratios = {1.0};
    cfg.split.names = {"train"};
    pipeline::finalize(cfg);

    const auto flaw_paths = pipeline::run_train_flaws(cfg);
    const json flaw_log = ser::read_json_file(flaw_paths[1])["payload"];
    CHECK(flaw_log["trainable"]["BLR"].get<bool>());
    pipeline::run_predict(cfg, flaw_paths[0]);
    {
        std::ifstream in(dir.str() + "/out/predictions.jsonl");
        std::string line;
        std::getline(in, line);
        CHECK(json::parse(line)["model_kind"] == "flaw_head");
        std::getline(in, line);
        const json row = json::parse(line);
        CHECK(row["kind"] == "flaws");
        CHECK(row["probabilities"].size() == 8);
        CHECK(row["labels"].size() == 8);
    }

    const auto vqa_paths = pipeline::run_train_vqa(cfg);
    const json vqa_log = ser::read_json_file(vqa_paths[1])["payload"];
    CHECK(vqa_log["variant"] == "softmax3");
    pipeline::run_predict(cfg, vqa_paths[0]);
    {
        std::ifstream in(dir.str() + "/out/predictions.jsonl");
        std::string line;
        std::getline(in, line);
        CHECK(json::parse(line)["model_kind"] == "reason_model");
        int rows = 0;
        while (std::getline(in, line)) {
            const json row = json::parse(line);
            CHECK(row["kind"] == "reason");
            CHECK(row["distribution"].size() == 3);
            ++rows;
        }
        CHECK(rows == 16);
    }

    // unknown checkpoint kind is rejected
    ser::write_json_file(dir.str() + "/bogus.json", json{{"kind", "mystery_head"}});
    CHECK_THROWS_AS(pipeline::run_predict(cfg, dir.str() + "/bogus.json"), SchemaError);
    CHECK_THROWS_AS(pipeline::run_predict(cfg, dir.str() + "/missing.json"), ConfigError);
}

TEST_CASE("feature cache is bit-transparent", "[pipeline]") {
    TempDir dir("cache");
    const auto corpus = fixture::write_fixture_corpus(dir.str() + "/corpus", 12, 17);
    auto cfg = fixture_config(corpus, dir.str() + "/out");
    cfg.split.ratios = {1.0};
    cfg.split.names = {"train"};
    pipeline::finalize(cfg);

    pipeline::run_train_rec(cfg);
    const std::string uncached = slurp(dir.str() + "/out/rec_head.json");

    const std::string cache_dir = dir.str() + "/feat_cache";
    ::setenv(pipeline::kFeatureCacheEnv, cache_dir.c_str(), 1);
    pipeline::run_train_rec(cfg);  // cold: fills the cache
    const std::string cold = slurp(dir.str() + "/out/rec_head.json");
    pipeline::run_train_rec(cfg);  // warm: reads it back
    const std::string warm = slurp(dir.str() + "/out/rec_head.json");
    ::unsetenv(pipeline::kFeatureCacheEnv);

    CHECK(uncached == cold);
    CHECK(cold == warm);
    std::size_t entries = 0;
    for (const auto& e : fs::directory_iterator(cache_dir)) {
        CHECK(e.path().extension() == ".iqcache");
        ++entries;
    }
    CHECK(entries == 12);
}

TEST_CASE("report bundles stats and cost", "[pipeline]") {
    TempDir dir("report");
    const auto corpus = fixture::write_fixture_corpus(dir.str() + "/corpus", 12, 19);
    const auto cfg = fixture_config(corpus, dir.str() + "/out");
    const auto paths = pipeline::run_report(cfg);
    REQUIRE(paths.size() == 2);
    const json p = ser::read_json_file(paths[0])["payload"];
    CHECK(p.contains("stats"));
    CHECK(p["cost"]["n_unrecognizable"].get<int>() == corpus.n_unrecognizable);
    CHECK(p["splits"].contains("train"));
    const std::string text = slurp(paths[1]);
    CHECK(text.find("Cost of unusable submissions") != std::string::npos);
}
