// iqtk: image-quality toolkit CLI. Every subcommand reads one declarative
// JSON config (flags override a handful of knobs), writes JSON artifacts to
// --out, and exits nonzero with a machine-readable error on any failure.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "iqtk/pipeline.hpp"

namespace {

using iqtk::pipeline::PipelineConfig;

const char* error_type(const std::exception& e) {
    using namespace iqtk;
    if (dynamic_cast<const ParseError*>(&e)) return "parse_error";
    if (dynamic_cast<const ValidationError*>(&e)) return "validation_error";
    if (dynamic_cast<const InsufficientRedundancyError*>(&e)) return "insufficient_redundancy";
    if (dynamic_cast<const UndefinedStatError*>(&e)) return "undefined_stat";
    if (dynamic_cast<const UndefinedMetricError*>(&e)) return "undefined_metric";
    if (dynamic_cast<const JoinError*>(&e)) return "join_error";
    if (dynamic_cast<const SchemaError*>(&e)) return "schema_error";
    if (dynamic_cast<const ConfigError*>(&e)) return "config_error";
    if (dynamic_cast<const DimensionError*>(&e)) return "dimension_error";
    if (dynamic_cast<const DegenerateTrainingError*>(&e)) return "degenerate_training";
    if (dynamic_cast<const DivergenceError*>(&e)) return "divergence";
    if (dynamic_cast<const InvalidSpecError*>(&e)) return "invalid_spec";
    if (dynamic_cast<const DecodeError*>(&e)) return "decode_error";
    if (dynamic_cast<const Error*>(&e)) return "error";
    return "internal_error";
}

int fail(const std::exception& e) {
    nlohmann::json j;
    j["error"] = {{"type", error_type(e)}, {"message", e.what()}};
    std::cerr << j.dump() << std::endl;
    return 1;
}

struct Overrides {
    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<double> threshold;
    std::optional<int> quorum;
    std::string variant;
};

void add_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--config", o.config_path, "pipeline config file (JSON)");
    cmd->add_option("--out", o.out_dir, "artifact output directory");
    cmd->add_option("--seed", o.seed, "global seed (overrides config)");
    cmd->add_option("--threshold", o.threshold, "decision threshold (overrides config)");
    cmd->add_option("--quorum", o.quorum, "votes needed per flaw channel");
}

PipelineConfig make_config(const Overrides& o) {
    PipelineConfig cfg = o.config_path.empty() ? iqtk::pipeline::default_config()
                                               : iqtk::pipeline::load_config(o.config_path);
    if (!o.out_dir.empty()) cfg.out_dir = o.out_dir;
    if (o.seed) cfg.seed = *o.seed;
    if (o.threshold) cfg.threshold = *o.threshold;
    if (o.quorum) cfg.quorum = *o.quorum;
    if (!o.variant.empty()) cfg.train_vqa.variant = iqtk::vqa::head_variant_from_name(o.variant);
    iqtk::pipeline::finalize(cfg);
    return cfg;
}

void report_written(const std::vector<std::string>& paths) {
    for (const auto& p : paths) std::cout << "wrote: " << p << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"image-quality toolkit: crowd annotations to quality-aware datasets"};
    app.require_subcommand(1);

    Overrides o;
    std::string model_path, predictions_path;
    std::int64_t n_unrecognizable = -1;

    auto* ingest = app.add_subcommand("ingest", "parse and validate raw annotations");
    auto* aggregate = app.add_subcommand("aggregate", "quorum-aggregate worker votes");
    auto* stats = app.add_subcommand("stats", "prevalence, conditionals, interrelation");
    auto* train_rec = app.add_subcommand("train-rec", "train the unrecognizability head");
    auto* train_flaws = app.add_subcommand("train-flaws", "train the 8-channel flaw head");
    auto* train_vqa = app.add_subcommand("train-vqa", "train the VQA reason model");
    auto* predict = app.add_subcommand("predict", "score images with a checkpoint");
    auto* evaluate = app.add_subcommand("evaluate", "AP / PRF / PR curve against labels");
    auto* overlap = app.add_subcommand("overlap", "score-distribution overlap by class");
    auto* filter = app.add_subcommand("filter", "emit a quality-filtered training manifest");
    auto* cost = app.add_subcommand("cost", "annotation cost wasted on unusable images");
    auto* report = app.add_subcommand("report", "bundled human-readable summary");

    for (auto* cmd : {ingest, aggregate, stats, train_rec, train_flaws, train_vqa, predict,
                      evaluate, overlap, filter, cost, report}) {
        add_common(cmd, o);
    }
    train_vqa->add_option("--variant", o.variant, "reason head: softmax3 or dual_sigmoid");
    predict->add_option("--model", model_path, "checkpoint to score with")->required();
    evaluate->add_option("--predictions", predictions_path, "predictions.jsonl")->required();
    overlap->add_option("--predictions", predictions_path, "predictions.jsonl")->required();
    std::string filter_scores, filter_mode;
    std::uint64_t filter_n = 0;
    filter->add_option("--mode", filter_mode, "full, predicted_flag, perfect_flag, random_sample");
    filter->add_option("--n-keep", filter_n, "images to keep (0 = auto)");
    filter->add_option("--predictions", filter_scores, "predictions.jsonl for predicted_flag");
    cost->add_option("--n-unrecognizable", n_unrecognizable,
                     "unrecognizable-image count (default: computed from annotations)");

    CLI11_PARSE(app, argc, argv);

    try {
        PipelineConfig cfg = make_config(o);
        std::vector<std::string> written;
        if (app.got_subcommand(ingest)) {
            written = iqtk::pipeline::run_ingest(cfg);
        } else if (app.got_subcommand(aggregate)) {
            written = iqtk::pipeline::run_aggregate(cfg);
        } else if (app.got_subcommand(stats)) {
            written = iqtk::pipeline::run_stats(cfg);
        } else if (app.got_subcommand(train_rec)) {
            written = iqtk::pipeline::run_train_rec(cfg);
        } else if (app.got_subcommand(train_flaws)) {
            written = iqtk::pipeline::run_train_flaws(cfg);
        } else if (app.got_subcommand(train_vqa)) {
            written = iqtk::pipeline::run_train_vqa(cfg);
        } else if (app.got_subcommand(predict)) {
            written = iqtk::pipeline::run_predict(cfg, model_path);
        } else if (app.got_subcommand(evaluate)) {
            written = iqtk::pipeline::run_evaluate(cfg, predictions_path);
        } else if (app.got_subcommand(overlap)) {
            written = iqtk::pipeline::run_overlap(cfg, predictions_path);
        } else if (app.got_subcommand(filter)) {
            if (!filter_mode.empty()) {
                using iqtk::curation::SelectionMode;
                if (filter_mode == "full") cfg.filter.mode = SelectionMode::full;
                else if (filter_mode == "predicted_flag")
                    cfg.filter.mode = SelectionMode::predicted_flag;
                else if (filter_mode == "perfect_flag")
                    cfg.filter.mode = SelectionMode::perfect_flag;
                else if (filter_mode == "random_sample")
                    cfg.filter.mode = SelectionMode::random_sample;
                else throw iqtk::ConfigError("filter: unknown mode '" + filter_mode + "'");
            }
            if (filter_n != 0) cfg.filter.n_keep = filter_n;
            if (!filter_scores.empty()) cfg.filter.scores_path = filter_scores;
            written = iqtk::pipeline::run_filter(cfg);
        } else if (app.got_subcommand(cost)) {
            std::optional<std::int64_t> n;
            if (n_unrecognizable >= 0) n = n_unrecognizable;
            written = iqtk::pipeline::run_cost(cfg, n);
        } else if (app.got_subcommand(report)) {
            written = iqtk::pipeline::run_report(cfg);
        }
        report_written(written);
        return 0;
    } catch (const std::exception& e) {
        return fail(e);
    }
}
