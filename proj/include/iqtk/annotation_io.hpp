#pragma once

// JSON file formats for annotation records, aggregated labels, and visual
// questions. All writers emit canonically ordered keys so reruns with the
// same inputs are byte-identical.

#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "iqtk/error.hpp"
#include "iqtk/labels.hpp"

namespace iqtk::data {

using json = nlohmann::json;

namespace detail {

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::pair<std::size_t, std::size_t> line_col_of(const std::string& text,
                                                       std::size_t byte_pos) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < byte_pos && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return {line, col};
}

inline json parse_json_text(const std::string& text, const std::string& path) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        auto [line, col] = line_col_of(text, e.byte > 0 ? e.byte - 1 : 0);
        throw ParseError(path + ":" + std::to_string(line) + ":" + std::to_string(col) +
                         ": " + e.what());
    }
}

inline json load_json_file(const std::string& path) {
    return parse_json_text(read_file(path), path);
}

}  // namespace detail

// --------------------------------------------------------------------------
// Annotation files: JSON array of
//   {image_id, uri, source_task, question?, annotations: [
//      {worker_id, caption, unrecognizable, flaws: {BLR..NON}, other_texts?}]}
// --------------------------------------------------------------------------

struct ParseOptions {
    int redundancy = 5;           // expected annotations per record
    bool enforce_redundancy = true;
};

inline json flaws_to_json(const FlawLabelSet& f) {
    json j = json::object();
    for (int i = 0; i < kFlawChannelCount; ++i) {
        j[kFlawCodes[static_cast<std::size_t>(i)]] = f.values[static_cast<std::size_t>(i)];
    }
    return j;
}

inline FlawLabelSet flaws_from_json(const json& j, const std::string& image_id) {
    if (!j.is_object()) throw ValidationError(image_id, "flaws", "flaws must be an object");
    FlawLabelSet f;
    for (int i = 0; i < kFlawChannelCount; ++i) {
        const char* code = kFlawCodes[static_cast<std::size_t>(i)];
        auto it = j.find(code);
        if (it == j.end() || !it->is_boolean()) {
            throw ValidationError(image_id, std::string("flaws.") + code,
                                  "missing or non-boolean flaw channel");
        }
        f.values[static_cast<std::size_t>(i)] = it->get<bool>();
    }
    return f;
}

inline json record_to_json(const ImageRecord& r) {
    json jr;
    jr["image_id"] = r.image_id;
    jr["uri"] = r.uri;
    jr["source_task"] = source_task_name(r.source_task);
    if (r.question) jr["question"] = *r.question;
    json anns = json::array();
    for (const auto& a : r.annotations) {
        json ja;
        ja["worker_id"] = a.worker_id;
        ja["caption"] = a.caption;
        ja["unrecognizable"] = a.unrecognizable;
        ja["flaws"] = flaws_to_json(a.flaws);
        if (!a.flaws.other_texts.empty()) ja["other_texts"] = a.flaws.other_texts;
        anns.push_back(std::move(ja));
    }
    jr["annotations"] = std::move(anns);
    return jr;
}

inline ImageRecord record_from_json(const json& jr) {
    if (!jr.is_object()) throw ParseError("record must be a JSON object");
    ImageRecord r;
    if (!jr.contains("image_id") || !jr["image_id"].is_string()) {
        throw ValidationError("", "image_id", "missing or non-string image_id");
    }
    r.image_id = jr["image_id"].get<std::string>();
    r.uri = jr.value("uri", std::string());
    const std::string task = jr.value("source_task", std::string("captioning"));
    auto st = source_task_from_name(task);
    if (!st) throw ValidationError(r.image_id, "source_task", "unknown source_task: " + task);
    r.source_task = *st;
    if (jr.contains("question")) {
        if (!jr["question"].is_string()) {
            throw ValidationError(r.image_id, "question", "question must be a string");
        }
        r.question = jr["question"].get<std::string>();
    }
    if (!jr.contains("annotations") || !jr["annotations"].is_array()) {
        throw ValidationError(r.image_id, "annotations", "missing annotations array");
    }
    for (const auto& ja : jr["annotations"]) {
        WorkerAnnotation a;
        a.worker_id = ja.value("worker_id", std::string());
        if (!ja.contains("caption") || !ja["caption"].is_string()) {
            throw ValidationError(r.image_id, "caption", "missing or non-string caption");
        }
        a.caption = ja["caption"].get<std::string>();
        if (!ja.contains("unrecognizable") || !ja["unrecognizable"].is_boolean()) {
            throw ValidationError(r.image_id, "unrecognizable",
                                  "missing or non-boolean unrecognizable");
        }
        a.unrecognizable = ja["unrecognizable"].get<bool>();
        if (!ja.contains("flaws")) {
            throw ValidationError(r.image_id, "flaws", "missing flaws object");
        }
        a.flaws = flaws_from_json(ja["flaws"], r.image_id);
        if (ja.contains("other_texts")) {
            for (const auto& t : ja["other_texts"]) {
                a.flaws.other_texts.push_back(t.get<std::string>());
            }
        }
        r.annotations.push_back(std::move(a));
    }
    return r;
}

// Parses and validates a whole annotation file. Total over valid files;
// throws ParseError (with line:column context) or ValidationError otherwise.
inline std::vector<ImageRecord> parse_annotation_file(const std::string& path,
                                                      const ParseOptions& opts = {}) {
    const json root = detail::load_json_file(path);
    if (!root.is_array()) throw ParseError(path + ": top-level value must be a JSON array");
    std::vector<ImageRecord> records;
    records.reserve(root.size());
    std::unordered_set<std::string> seen_ids;
    for (const auto& jr : root) {
        ImageRecord r = record_from_json(jr);
        validate_record(r, opts.enforce_redundancy ? opts.redundancy : 0);
        if (!seen_ids.insert(r.image_id).second) {
            throw ValidationError(r.image_id, "image_id", "duplicate image_id in dataset");
        }
        records.push_back(std::move(r));
    }
    return records;
}

inline void write_annotation_file(const std::string& path,
                                  const std::vector<ImageRecord>& records) {
    json root = json::array();
    for (const auto& r : records) root.push_back(record_to_json(r));
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write file: " + path);
    out << root.dump(2) << "\n";
}

// --------------------------------------------------------------------------
// Aggregated labels: JSON array of
//   {image_id, unrecognizable, unrecognizable_votes, flaws, vote_counts,
//    redundancy}
// --------------------------------------------------------------------------

inline json aggregated_to_json(const AggregatedLabels& a) {
    json j;
    j["image_id"] = a.image_id;
    j["unrecognizable"] = a.unrecognizable;
    j["unrecognizable_votes"] = a.unrecognizable_votes;
    j["flaws"] = flaws_to_json(a.flaws);
    json vc = json::object();
    for (int i = 0; i < kFlawChannelCount; ++i) {
        vc[kFlawCodes[static_cast<std::size_t>(i)]] =
            a.vote_counts[static_cast<std::size_t>(i)];
    }
    j["vote_counts"] = std::move(vc);
    j["redundancy"] = a.redundancy;
    return j;
}

inline AggregatedLabels aggregated_from_json(const json& j) {
    AggregatedLabels a;
    a.image_id = j.at("image_id").get<std::string>();
    a.unrecognizable = j.at("unrecognizable").get<bool>();
    a.unrecognizable_votes = j.value("unrecognizable_votes", a.unrecognizable ? 1 : 0);
    a.flaws = flaws_from_json(j.at("flaws"), a.image_id);
    if (j.contains("vote_counts")) {
        for (int i = 0; i < kFlawChannelCount; ++i) {
            a.vote_counts[static_cast<std::size_t>(i)] =
                j["vote_counts"].value(kFlawCodes[static_cast<std::size_t>(i)], 0);
        }
    }
    a.redundancy = j.value("redundancy", 0);
    return a;
}

inline void write_aggregated_file(const std::string& path,
                                  const std::vector<AggregatedLabels>& labels) {
    json root = json::array();
    for (const auto& a : labels) root.push_back(aggregated_to_json(a));
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write file: " + path);
    out << root.dump(2) << "\n";
}

inline std::vector<AggregatedLabels> read_aggregated_file(const std::string& path) {
    const json root = detail::load_json_file(path);
    if (!root.is_array()) throw ParseError(path + ": top-level value must be a JSON array");
    std::vector<AggregatedLabels> out;
    out.reserve(root.size());
    for (const auto& j : root) out.push_back(aggregated_from_json(j));
    return out;
}

// --------------------------------------------------------------------------
// Question files: JSON array of {image_id, question, answerable,
// unrecognizable?}. When a record omits unrecognizable it must join to an
// aggregated label by image_id.
// --------------------------------------------------------------------------

struct QuestionEntry {
    std::string image_id;
    std::string question;
    bool answerable = false;
    std::optional<bool> unrecognizable;
};

inline std::vector<QuestionEntry> read_question_file(const std::string& path) {
    const json root = detail::load_json_file(path);
    if (!root.is_array()) throw ParseError(path + ": top-level value must be a JSON array");
    std::vector<QuestionEntry> out;
    for (const auto& j : root) {
        QuestionEntry q;
        q.image_id = j.at("image_id").get<std::string>();
        q.question = j.at("question").get<std::string>();
        q.answerable = j.at("answerable").get<bool>();
        if (j.contains("unrecognizable")) q.unrecognizable = j["unrecognizable"].get<bool>();
        out.push_back(std::move(q));
    }
    return out;
}

inline void write_question_file(const std::string& path,
                                const std::vector<QuestionEntry>& entries) {
    json root = json::array();
    for (const auto& q : entries) {
        json j;
        j["image_id"] = q.image_id;
        j["question"] = q.question;
        j["answerable"] = q.answerable;
        if (q.unrecognizable) j["unrecognizable"] = *q.unrecognizable;
        root.push_back(std::move(j));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write file: " + path);
    out << root.dump(2) << "\n";
}

// Joins question entries with aggregated labels to produce VisualQuestions
// (three-way reason class included). Entries with an inline unrecognizable
// bit do not need a join partner.
inline std::vector<VisualQuestion> build_visual_questions(
    const std::vector<QuestionEntry>& entries,
    const std::vector<AggregatedLabels>& labels) {
    std::unordered_map<std::string, const AggregatedLabels*> by_id;
    by_id.reserve(labels.size());
    for (const auto& a : labels) by_id[a.image_id] = &a;

    std::vector<VisualQuestion> out;
    std::vector<std::string> missing;
    for (const auto& e : entries) {
        bool unrec;
        if (e.unrecognizable) {
            unrec = *e.unrecognizable;
        } else {
            auto it = by_id.find(e.image_id);
            if (it == by_id.end()) {
                missing.push_back(e.image_id);
                continue;
            }
            unrec = it->second->unrecognizable;
        }
        out.push_back(make_visual_question(e.image_id, e.question, e.answerable, unrec));
    }
    if (!missing.empty()) {
        std::string msg = "questions with no matching aggregated label:";
        for (const auto& id : missing) msg += " " + id;
        throw JoinError(msg, std::move(missing));
    }
    return out;
}

}  // namespace iqtk::data
