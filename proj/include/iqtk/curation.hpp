#pragma once

// Dataset splitting, recognizability-based filtering of a captioning
// training set, the perfect/random comparison baselines, and the annotation
// cost calculator.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "iqtk/error.hpp"
#include "iqtk/hashing.hpp"
#include "iqtk/labels.hpp"
#include "iqtk/rng.hpp"

namespace iqtk::curation {

using data::AggregatedLabels;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

struct SplitSpec {
    std::vector<double> ratios;
    std::vector<std::string> names;
    std::uint64_t seed = 0;
    bool stratified = false;  // caller supplies per-item strata when true
};

inline void validate_split_spec(const SplitSpec& spec) {
    if (spec.ratios.empty() || spec.ratios.size() != spec.names.size()) {
        throw InvalidSpecError("split spec: ratios and names must be nonempty and equal-length");
    }
    double sum = 0.0;
    for (double r : spec.ratios) {
        if (r < 0.0) throw InvalidSpecError("split spec: negative ratio");
        sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw InvalidSpecError("split spec: ratios must sum to 1");
    }
}

namespace detail {

// Largest-remainder allocation of n items into |ratios| buckets; exact when
// n * ratio_i are integers.
inline std::vector<std::size_t> allocate_counts(std::size_t n, const std::vector<double>& ratios) {
    const std::size_t k = ratios.size();
    std::vector<std::size_t> counts(k, 0);
    std::vector<double> fracs(k, 0.0);
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < k; ++i) {
        const double target = static_cast<double>(n) * ratios[i];
        counts[i] = static_cast<std::size_t>(std::floor(target + 1e-9));
        fracs[i] = target - static_cast<double>(counts[i]);
        assigned += counts[i];
    }
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (fracs[a] != fracs[b]) return fracs[a] > fracs[b];
        return a < b;
    });
    for (std::size_t i = 0; assigned < n; ++i) {
        ++counts[order[i % k]];
        ++assigned;
    }
    return counts;
}

}  // namespace detail

// Splits indices [0, n) into |ratios| named parts; deterministic under the
// seed; when strata are given, each stratum is allocated independently so
// per-split stratum proportions are exact up to rounding (+-1 per stratum).
// Returns one index list per split, each sorted ascending.
inline std::vector<std::vector<std::size_t>> split_indices(
    std::size_t n, const SplitSpec& spec,
    const std::vector<int>* strata = nullptr) {
    validate_split_spec(spec);
    if (strata != nullptr && strata->size() != n) {
        throw InvalidSpecError("split: strata size must match dataset size");
    }
    if (n < spec.ratios.size()) {
        throw InvalidSpecError("split: dataset smaller than the number of splits");
    }
    // group indices by stratum (single group when unstratified)
    std::map<int, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < n; ++i) {
        groups[strata ? (*strata)[i] : 0].push_back(i);
    }
    std::vector<std::vector<std::size_t>> splits(spec.ratios.size());
    for (auto& [key, idx] : groups) {
        Rng rng(spec.seed ^ fnv1a64("stratum:" + std::to_string(key)));
        rng.shuffle(idx);
        const auto counts = detail::allocate_counts(idx.size(), spec.ratios);
        std::size_t at = 0;
        for (std::size_t s = 0; s < counts.size(); ++s) {
            for (std::size_t c = 0; c < counts[s]; ++c) splits[s].push_back(idx[at++]);
        }
    }
    for (auto& s : splits) std::sort(s.begin(), s.end());
    return splits;
}

// ---------------------------------------------------------------------------
// Cost model
// ---------------------------------------------------------------------------

struct CostModel {
    double per_image_rate = 0.132;  // dollars paid per annotation
    double per_image_seconds = 47.0;
    int redundancy = 5;
};

struct CostSavings {
    double dollars = 0.0;
    double hours = 0.0;
};

// Each unrecognizable image wastes `redundancy` paid annotations.
inline CostSavings cost_savings(std::int64_t n_unrecognizable, const CostModel& cost = {}) {
    if (cost.per_image_rate <= 0.0 || cost.per_image_seconds <= 0.0 || cost.redundancy <= 0) {
        throw InvalidSpecError("cost model: all fields must be positive");
    }
    if (n_unrecognizable < 0) {
        throw InvalidSpecError("cost_savings: count must be nonnegative");
    }
    CostSavings s;
    const double annotations =
        static_cast<double>(n_unrecognizable) * static_cast<double>(cost.redundancy);
    s.dollars = annotations * cost.per_image_rate;
    s.hours = annotations * cost.per_image_seconds / 3600.0;
    return s;
}

// ---------------------------------------------------------------------------
// Training manifests
// ---------------------------------------------------------------------------

enum class SelectionMode { full, predicted_flag, perfect_flag, random_sample };

inline const char* selection_mode_name(SelectionMode m) {
    switch (m) {
        case SelectionMode::full: return "full";
        case SelectionMode::predicted_flag: return "predicted_flag";
        case SelectionMode::perfect_flag: return "perfect_flag";
        case SelectionMode::random_sample: return "random_sample";
    }
    return "?";
}

inline std::optional<SelectionMode> selection_mode_from_name(const std::string& s) {
    if (s == "full") return SelectionMode::full;
    if (s == "predicted_flag") return SelectionMode::predicted_flag;
    if (s == "perfect_flag") return SelectionMode::perfect_flag;
    if (s == "random_sample") return SelectionMode::random_sample;
    return std::nullopt;
}

struct TrainingManifest {
    SelectionMode selection_mode = SelectionMode::full;
    std::vector<std::string> image_ids;
    std::string provenance;  // model checkpoint id or seed
    std::size_t n() const { return image_ids.size(); }
};

inline TrainingManifest full_manifest(std::vector<std::string> image_ids) {
    TrainingManifest m;
    m.selection_mode = SelectionMode::full;
    m.image_ids = std::move(image_ids);
    m.provenance = "full";
    return m;
}

// Keeps images whose predicted unrecognizability is below the threshold.
// `p_unrecognizable` is aligned with `image_ids`.
inline TrainingManifest filter_predicted(const std::vector<std::string>& image_ids,
                                         const std::vector<double>& p_unrecognizable,
                                         double threshold, std::string provenance) {
    if (image_ids.size() != p_unrecognizable.size()) {
        throw DimensionError("filter_predicted: ids/probabilities size mismatch");
    }
    TrainingManifest m;
    m.selection_mode = SelectionMode::predicted_flag;
    m.provenance = std::move(provenance);
    for (std::size_t i = 0; i < image_ids.size(); ++i) {
        if (p_unrecognizable[i] < threshold) m.image_ids.push_back(image_ids[i]);
    }
    return m;
}

// Removes images in descending unrecognizability-vote order until N remain;
// removal starts at full-agreement images, ties broken by ascending
// image_id, so the result is invariant to input order.
inline TrainingManifest perfect_flag(const std::vector<AggregatedLabels>& labels,
                                     std::size_t n_keep) {
    if (n_keep > labels.size()) {
        throw InvalidSpecError("perfect_flag: N exceeds dataset size");
    }
    std::vector<const AggregatedLabels*> rows;
    rows.reserve(labels.size());
    for (const auto& a : labels) rows.push_back(&a);
    std::sort(rows.begin(), rows.end(),
              [](const AggregatedLabels* a, const AggregatedLabels* b) {
                  if (a->unrecognizable_votes != b->unrecognizable_votes) {
                      return a->unrecognizable_votes > b->unrecognizable_votes;
                  }
                  return a->image_id < b->image_id;
              });
    TrainingManifest m;
    m.selection_mode = SelectionMode::perfect_flag;
    m.provenance = "vote_ranking";
    const std::size_t n_remove = labels.size() - n_keep;
    for (std::size_t i = n_remove; i < rows.size(); ++i) {
        m.image_ids.push_back(rows[i]->image_id);
    }
    std::sort(m.image_ids.begin(), m.image_ids.end());
    return m;
}

// Uniform sample of N image ids without replacement, seeded.
inline TrainingManifest random_sample(const std::vector<std::string>& image_ids,
                                      std::size_t n, std::uint64_t seed) {
    if (n > image_ids.size()) {
        throw InvalidSpecError("random_sample: N exceeds dataset size");
    }
    Rng rng(seed);
    auto picks = rng.sample_without_replacement(image_ids.size(), n);
    std::sort(picks.begin(), picks.end());
    TrainingManifest m;
    m.selection_mode = SelectionMode::random_sample;
    m.provenance = "seed:" + std::to_string(seed);
    for (std::size_t i : picks) m.image_ids.push_back(image_ids[i]);
    return m;
}

inline json manifest_to_json(const TrainingManifest& m) {
    json j;
    j["selection_mode"] = selection_mode_name(m.selection_mode);
    j["N"] = m.image_ids.size();
    j["image_ids"] = m.image_ids;
    j["provenance"] = m.provenance;
    return j;
}

inline TrainingManifest manifest_from_json(const json& j) {
    TrainingManifest m;
    const auto mode = selection_mode_from_name(j.at("selection_mode").get<std::string>());
    if (!mode) throw ParseError("manifest: unknown selection_mode");
    m.selection_mode = *mode;
    m.image_ids = j.at("image_ids").get<std::vector<std::string>>();
    m.provenance = j.value("provenance", std::string());
    if (j.contains("N") && j["N"].get<std::size_t>() != m.image_ids.size()) {
        throw SchemaError("manifest: N does not match image_ids length");
    }
    return m;
}

// ---------------------------------------------------------------------------
// Manifest comparison report (downstream results supplied externally)
// ---------------------------------------------------------------------------

struct ResultRow {
    std::string model;           // e.g. a captioning system id
    std::string selection_mode;  // matches a manifest's mode
    std::map<std::string, double> metrics;
};

// Parses a downstream-results CSV: header "model,selection_mode,<metric...>",
// one row per (model, mode).
inline std::vector<ResultRow> parse_results_csv(const std::string& text) {
    std::vector<ResultRow> rows;
    std::vector<std::string> header;
    std::size_t pos = 0;
    bool first = true;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        std::string line = text.substr(pos, end - pos);
        pos = end + 1;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::size_t c = 0;
        while (true) {
            std::size_t comma = line.find(',', c);
            if (comma == std::string::npos) {
                cells.push_back(line.substr(c));
                break;
            }
            cells.push_back(line.substr(c, comma - c));
            c = comma + 1;
        }
        if (first) {
            if (cells.size() < 3 || cells[0] != "model" || cells[1] != "selection_mode") {
                throw ParseError("results csv: header must start with model,selection_mode");
            }
            header = cells;
            first = false;
            continue;
        }
        if (cells.size() != header.size()) {
            throw ParseError("results csv: row width does not match header");
        }
        ResultRow row;
        row.model = cells[0];
        row.selection_mode = cells[1];
        for (std::size_t i = 2; i < cells.size(); ++i) {
            try {
                row.metrics[header[i]] = std::stod(cells[i]);
            } catch (const std::exception&) {
                throw ParseError("results csv: non-numeric metric value '" + cells[i] + "'");
            }
        }
        rows.push_back(std::move(row));
    }
    if (first) throw ParseError("results csv: empty file");
    return rows;
}

// Tabulates the supplied metric rows per manifest selection mode. Every
// manifest must have a result row for every model present.
inline json compare_manifests(const std::vector<TrainingManifest>& manifests,
                              const std::vector<ResultRow>& results) {
    std::vector<std::string> models;
    for (const auto& r : results) {
        if (std::find(models.begin(), models.end(), r.model) == models.end()) {
            models.push_back(r.model);
        }
    }
    json table = json::array();
    for (const auto& model : models) {
        for (const auto& m : manifests) {
            const std::string mode = selection_mode_name(m.selection_mode);
            const ResultRow* found = nullptr;
            for (const auto& r : results) {
                if (r.model == model && r.selection_mode == mode) {
                    found = &r;
                    break;
                }
            }
            if (found == nullptr) {
                throw JoinError("no result row for model '" + model + "', selection mode '" +
                                    mode + "'",
                                {mode});
            }
            json row;
            row["model"] = model;
            row["selection_mode"] = mode;
            row["N"] = m.image_ids.size();
            row["metrics"] = found->metrics;
            table.push_back(std::move(row));
        }
    }
    json out;
    out["rows"] = std::move(table);
    return out;
}

}  // namespace iqtk::curation
