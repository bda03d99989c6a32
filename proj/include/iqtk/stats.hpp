#pragma once

// Empirical statistics over aggregated labels: prevalence, conditionals,
// the pairwise interrelation index, and answerability cross-statistics.
// Probabilities are raw frequencies; no smoothing anywhere.

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "iqtk/error.hpp"
#include "iqtk/labels.hpp"

namespace iqtk::stats {

using data::AggregatedLabels;
using data::FlawChannel;
using data::kFlawChannelCount;
using data::VisualQuestion;
using json = nlohmann::json;

// A label readable off an AggregatedLabels row: one flaw channel or the
// unrecognizability bit.
struct LabelQuery {
    enum class Kind { flaw, unrecognizable } kind = Kind::flaw;
    FlawChannel channel = FlawChannel::Blur;

    static LabelQuery flaw(FlawChannel c) { return {Kind::flaw, c}; }
    static LabelQuery unrecognizable() { return {Kind::unrecognizable, FlawChannel::Blur}; }

    bool eval(const AggregatedLabels& a) const {
        return kind == Kind::unrecognizable ? a.unrecognizable : a.flaws[channel];
    }

    std::string name() const {
        return kind == Kind::unrecognizable ? "UNREC" : data::flaw_code(channel);
    }
};

// ---------------------------------------------------------------------------
// Contingency table and the interrelation index
// ---------------------------------------------------------------------------

struct ContingencyTable {
    // counts of (A&B), (A&!B), (!A&B), (!A&!B)
    std::int64_t n11 = 0, n10 = 0, n01 = 0, n00 = 0;

    std::int64_t total() const { return n11 + n10 + n01 + n00; }
    std::int64_t count_a() const { return n11 + n10; }
    std::int64_t count_b() const { return n11 + n01; }

    double p_a() const { return static_cast<double>(count_a()) / static_cast<double>(total()); }
    double p_b() const { return static_cast<double>(count_b()) / static_cast<double>(total()); }

    static ContingencyTable from_labels(const std::vector<AggregatedLabels>& labels,
                                        const LabelQuery& a, const LabelQuery& b) {
        ContingencyTable t;
        for (const auto& row : labels) {
            const bool va = a.eval(row), vb = b.eval(row);
            if (va && vb)
                ++t.n11;
            else if (va)
                ++t.n10;
            else if (vb)
                ++t.n01;
            else
                ++t.n00;
        }
        return t;
    }
};

// Interrelation index I(A,B) = P(B|A)/P(B) - P(B|~A)/P(B).
// Requires 0 < P(A) < 1 and P(B) > 0; positive values mean A and B promote
// each other, negative values mean they suppress each other. The reporting
// layer scales by 100; this returns the raw value.
inline double interrelation(const ContingencyTable& t) {
    if (t.total() <= 0) throw UndefinedStatError("interrelation: empty table");
    const std::int64_t a = t.count_a();
    const std::int64_t not_a = t.n01 + t.n00;
    const std::int64_t b = t.count_b();
    if (a == 0) throw UndefinedStatError("interrelation: P(A) = 0");
    if (not_a == 0) throw UndefinedStatError("interrelation: P(A) = 1");
    if (b == 0) throw UndefinedStatError("interrelation: P(B) = 0");
    const double p_b_given_a = static_cast<double>(t.n11) / static_cast<double>(a);
    const double p_b_given_not_a = static_cast<double>(t.n01) / static_cast<double>(not_a);
    const double p_b = static_cast<double>(b) / static_cast<double>(t.total());
    return p_b_given_a / p_b - p_b_given_not_a / p_b;
}

// ---------------------------------------------------------------------------
// Prevalence and conditional probability
// ---------------------------------------------------------------------------

inline double prevalence(const std::vector<AggregatedLabels>& labels, const LabelQuery& q) {
    if (labels.empty()) throw UndefinedStatError("prevalence: empty label set");
    std::int64_t count = 0;
    for (const auto& row : labels)
        if (q.eval(row)) ++count;
    return static_cast<double>(count) / static_cast<double>(labels.size());
}

inline double prevalence(const std::vector<AggregatedLabels>& labels, FlawChannel c) {
    return prevalence(labels, LabelQuery::flaw(c));
}

// P(target | given) over the label set. Zero conditioning count is an error.
inline double conditional(const std::vector<AggregatedLabels>& labels,
                          const LabelQuery& target, const LabelQuery& given) {
    std::int64_t n_given = 0, n_both = 0;
    for (const auto& row : labels) {
        if (given.eval(row)) {
            ++n_given;
            if (target.eval(row)) ++n_both;
        }
    }
    if (n_given == 0) {
        throw UndefinedStatError("conditional: P(" + given.name() + ") = 0");
    }
    return static_cast<double>(n_both) / static_cast<double>(n_given);
}

// ---------------------------------------------------------------------------
// Interrelation matrix over the eight flaw channels
// ---------------------------------------------------------------------------

struct MatrixEntry {
    double value = 0.0;
    bool defined = false;
    std::string note;  // why undefined ("diagonal", degenerate marginal)
};

using InterrelationMatrix =
    std::array<std::array<MatrixEntry, kFlawChannelCount>, kFlawChannelCount>;

// entry (i,j) = I(flaw i, flaw j); diagonal suppressed; degenerate pairs
// flagged in place instead of raised.
inline InterrelationMatrix interrelation_matrix(const std::vector<AggregatedLabels>& labels) {
    InterrelationMatrix m;
    for (int i = 0; i < kFlawChannelCount; ++i) {
        for (int j = 0; j < kFlawChannelCount; ++j) {
            auto& e = m[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
            if (i == j) {
                e.note = "diagonal";
                continue;
            }
            const auto t = ContingencyTable::from_labels(
                labels, LabelQuery::flaw(static_cast<FlawChannel>(i)),
                LabelQuery::flaw(static_cast<FlawChannel>(j)));
            try {
                e.value = interrelation(t);
                e.defined = true;
            } catch (const UndefinedStatError& err) {
                e.note = err.what();
            }
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// Answerability cross-statistics
// ---------------------------------------------------------------------------

struct AnswerabilityStats {
    std::int64_t n_questions = 0;
    double p_unanswerable = 0.0;                                   // P(~A)
    std::array<std::optional<double>, kFlawChannelCount> p_unans_given_flaw;  // P(~A|Q)
    std::optional<double> p_unans_given_unrec;                     // P(~A|~R)
    double p_unrec = 0.0;                                          // P(~R)
    std::optional<double> p_unrec_given_unans;                     // P(~R|~A)
    std::optional<double> post_assignment_unrec_mass;              // P(~A) * P(~R|~A)
};

// Mass of questions still labeled unrecognizable after answerable questions
// are forced to not-unrecognizable: P(~A) * P(~R|~A).
inline double post_assignment_unrecognizable_mass(double p_unanswerable,
                                                  double p_unrec_given_unans) {
    return p_unanswerable * p_unrec_given_unans;
}

// Every question must join to an aggregated label by image_id (the quality
// labels supply ~R and the flaw conditions).
inline AnswerabilityStats answerability_stats(const std::vector<VisualQuestion>& questions,
                                              const std::vector<AggregatedLabels>& labels) {
    if (questions.empty()) throw UndefinedStatError("answerability_stats: no questions");
    std::unordered_map<std::string, const AggregatedLabels*> by_id;
    by_id.reserve(labels.size());
    for (const auto& a : labels) by_id[a.image_id] = &a;

    std::vector<std::string> missing;
    for (const auto& q : questions) {
        if (by_id.find(q.image_id) == by_id.end()) missing.push_back(q.image_id);
    }
    if (!missing.empty()) {
        std::string msg = "questions with no matching aggregated label:";
        for (const auto& id : missing) msg += " " + id;
        throw JoinError(msg, std::move(missing));
    }

    AnswerabilityStats s;
    s.n_questions = static_cast<std::int64_t>(questions.size());
    std::int64_t n_unans = 0, n_unrec = 0, n_unans_and_unrec = 0;
    std::array<std::int64_t, kFlawChannelCount> n_flaw{}, n_unans_and_flaw{};
    for (const auto& q : questions) {
        const AggregatedLabels& a = *by_id[q.image_id];
        const bool unans = !q.answerable;
        if (unans) ++n_unans;
        if (a.unrecognizable) {
            ++n_unrec;
            if (unans) ++n_unans_and_unrec;
        }
        for (int i = 0; i < kFlawChannelCount; ++i) {
            if (a.flaws.values[static_cast<std::size_t>(i)]) {
                ++n_flaw[static_cast<std::size_t>(i)];
                if (unans) ++n_unans_and_flaw[static_cast<std::size_t>(i)];
            }
        }
    }
    const double n = static_cast<double>(s.n_questions);
    s.p_unanswerable = static_cast<double>(n_unans) / n;
    s.p_unrec = static_cast<double>(n_unrec) / n;
    for (int i = 0; i < kFlawChannelCount; ++i) {
        const auto k = static_cast<std::size_t>(i);
        if (n_flaw[k] > 0) {
            s.p_unans_given_flaw[k] =
                static_cast<double>(n_unans_and_flaw[k]) / static_cast<double>(n_flaw[k]);
        }
    }
    if (n_unrec > 0) {
        s.p_unans_given_unrec =
            static_cast<double>(n_unans_and_unrec) / static_cast<double>(n_unrec);
    }
    if (n_unans > 0) {
        s.p_unrec_given_unans =
            static_cast<double>(n_unans_and_unrec) / static_cast<double>(n_unans);
        s.post_assignment_unrec_mass =
            post_assignment_unrecognizable_mass(s.p_unanswerable, *s.p_unrec_given_unans);
    }
    return s;
}

// ---------------------------------------------------------------------------
// Full report
// ---------------------------------------------------------------------------

struct StatsReport {
    std::int64_t n_images = 0;
    std::array<double, kFlawChannelCount> prevalence{};       // per flaw
    double prevalence_unrecognizable = 0.0;
    std::array<std::optional<double>, kFlawChannelCount> p_unrec_given_flaw;
    std::array<std::optional<double>, kFlawChannelCount> p_flaw_given_unrec;
    InterrelationMatrix interrelation;
    std::optional<AnswerabilityStats> answerability;  // present when questions supplied
};

inline StatsReport compute_stats_report(const std::vector<AggregatedLabels>& labels,
                                        const std::vector<VisualQuestion>* questions = nullptr) {
    if (labels.empty()) throw UndefinedStatError("stats report: empty label set");
    StatsReport r;
    r.n_images = static_cast<std::int64_t>(labels.size());
    const LabelQuery unrec = LabelQuery::unrecognizable();
    r.prevalence_unrecognizable = prevalence(labels, unrec);
    for (int i = 0; i < kFlawChannelCount; ++i) {
        const auto k = static_cast<std::size_t>(i);
        const LabelQuery flaw = LabelQuery::flaw(static_cast<FlawChannel>(i));
        r.prevalence[k] = prevalence(labels, flaw);
        try {
            r.p_unrec_given_flaw[k] = conditional(labels, unrec, flaw);
        } catch (const UndefinedStatError&) {
        }
        try {
            r.p_flaw_given_unrec[k] = conditional(labels, flaw, unrec);
        } catch (const UndefinedStatError&) {
        }
    }
    r.interrelation = interrelation_matrix(labels);
    if (questions != nullptr && !questions->empty()) {
        r.answerability = answerability_stats(*questions, labels);
    }
    return r;
}

// ---------------------------------------------------------------------------
// Serialization. JSON keeps full precision; the text rendering rounds to
// three decimals and scales matrix entries by 100.
// ---------------------------------------------------------------------------

inline json stats_report_to_json(const StatsReport& r) {
    json j;
    j["n_images"] = r.n_images;
    json prev = json::object();
    json pugf = json::object();
    json pfgu = json::object();
    for (int i = 0; i < kFlawChannelCount; ++i) {
        const auto k = static_cast<std::size_t>(i);
        const char* code = data::kFlawCodes[k];
        prev[code] = r.prevalence[k];
        pugf[code] = r.p_unrec_given_flaw[k] ? json(*r.p_unrec_given_flaw[k]) : json();
        pfgu[code] = r.p_flaw_given_unrec[k] ? json(*r.p_flaw_given_unrec[k]) : json();
    }
    j["prevalence"] = std::move(prev);
    j["prevalence_unrecognizable"] = r.prevalence_unrecognizable;
    j["p_unrecognizable_given_flaw"] = std::move(pugf);
    j["p_flaw_given_unrecognizable"] = std::move(pfgu);

    json m = json::array();
    for (int i = 0; i < kFlawChannelCount; ++i) {
        json row = json::array();
        for (int jx = 0; jx < kFlawChannelCount; ++jx) {
            const auto& e =
                r.interrelation[static_cast<std::size_t>(i)][static_cast<std::size_t>(jx)];
            if (e.defined) {
                row.push_back(e.value);
            } else {
                row.push_back(nullptr);
            }
        }
        m.push_back(std::move(row));
    }
    j["interrelation_matrix"] = std::move(m);

    if (r.answerability) {
        const auto& s = *r.answerability;
        json a;
        a["n_questions"] = s.n_questions;
        a["p_unanswerable"] = s.p_unanswerable;
        a["p_unrecognizable"] = s.p_unrec;
        json per_flaw = json::object();
        for (int i = 0; i < kFlawChannelCount; ++i) {
            const auto k = static_cast<std::size_t>(i);
            per_flaw[data::kFlawCodes[k]] =
                s.p_unans_given_flaw[k] ? json(*s.p_unans_given_flaw[k]) : json();
        }
        a["p_unanswerable_given_flaw"] = std::move(per_flaw);
        a["p_unanswerable_given_unrecognizable"] =
            s.p_unans_given_unrec ? json(*s.p_unans_given_unrec) : json();
        a["p_unrecognizable_given_unanswerable"] =
            s.p_unrec_given_unans ? json(*s.p_unrec_given_unans) : json();
        a["post_assignment_unrecognizable_mass"] =
            s.post_assignment_unrec_mass ? json(*s.post_assignment_unrec_mass) : json();
        j["answerability"] = std::move(a);
    }
    return j;
}

// CSV of the interrelation matrix scaled by 100 (one header row/column of
// flaw codes; empty cells where undefined).
inline std::string interrelation_matrix_csv(const InterrelationMatrix& m) {
    std::string out = "flaw";
    for (int j = 0; j < kFlawChannelCount; ++j) {
        out += ",";
        out += data::kFlawCodes[static_cast<std::size_t>(j)];
    }
    out += "\n";
    char buf[64];
    for (int i = 0; i < kFlawChannelCount; ++i) {
        out += data::kFlawCodes[static_cast<std::size_t>(i)];
        for (int j = 0; j < kFlawChannelCount; ++j) {
            const auto& e = m[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
            out += ",";
            if (e.defined) {
                std::snprintf(buf, sizeof(buf), "%.3f", e.value * 100.0);
                out += buf;
            }
        }
        out += "\n";
    }
    return out;
}

// Human-readable rendering, three decimals.
inline std::string stats_report_text(const StatsReport& r) {
    char buf[128];
    std::string out;
    std::snprintf(buf, sizeof(buf), "images: %lld\n", static_cast<long long>(r.n_images));
    out += buf;
    std::snprintf(buf, sizeof(buf), "P(unrecognizable) = %.3f\n", r.prevalence_unrecognizable);
    out += buf;
    out += "prevalence per flaw:\n";
    for (int i = 0; i < kFlawChannelCount; ++i) {
        const auto k = static_cast<std::size_t>(i);
        std::snprintf(buf, sizeof(buf), "  %s = %.3f\n", data::kFlawCodes[k], r.prevalence[k]);
        out += buf;
    }
    out += "P(unrecognizable | flaw):\n";
    for (int i = 0; i < kFlawChannelCount; ++i) {
        const auto k = static_cast<std::size_t>(i);
        if (r.p_unrec_given_flaw[k]) {
            std::snprintf(buf, sizeof(buf), "  %s = %.3f\n", data::kFlawCodes[k],
                          *r.p_unrec_given_flaw[k]);
        } else {
            std::snprintf(buf, sizeof(buf), "  %s = undefined\n", data::kFlawCodes[k]);
        }
        out += buf;
    }
    out += "interrelation matrix (x100):\n" + interrelation_matrix_csv(r.interrelation);
    if (r.answerability) {
        const auto& s = *r.answerability;
        std::snprintf(buf, sizeof(buf), "P(unanswerable) = %.3f\n", s.p_unanswerable);
        out += buf;
        if (s.p_unrec_given_unans) {
            std::snprintf(buf, sizeof(buf), "P(unrec | unans) = %.3f\n", *s.p_unrec_given_unans);
            out += buf;
        }
    }
    return out;
}

}  // namespace iqtk::stats
