#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace iqtk {

// Base class for every error the toolkit raises on purpose.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed input file (bad JSON, bad binary container).
class ParseError : public Error {
public:
    using Error::Error;
};

// A record violates a type invariant; carries the offending record and field.
class ValidationError : public Error {
public:
    ValidationError(const std::string& image_id, const std::string& field,
                    const std::string& what)
        : Error("validation error [image_id=" + image_id + ", field=" + field + "]: " + what),
          image_id_(image_id), field_(field) {}

    const std::string& image_id() const { return image_id_; }
    const std::string& field() const { return field_; }

private:
    std::string image_id_;
    std::string field_;
};

// Fewer redundant annotations than the quorum requires.
class InsufficientRedundancyError : public Error {
public:
    using Error::Error;
};

// A probability/statistic query whose denominator is empty or degenerate.
class UndefinedStatError : public Error {
public:
    using Error::Error;
};

// A metric query with no positives / empty group.
class UndefinedMetricError : public Error {
public:
    using Error::Error;
};

// image_ids that could not be joined across label sets.
class JoinError : public Error {
public:
    JoinError(const std::string& what, std::vector<std::string> missing_ids)
        : Error(what), missing_ids_(std::move(missing_ids)) {}

    const std::vector<std::string>& missing_ids() const { return missing_ids_; }

private:
    std::vector<std::string> missing_ids_;
};

// Missing weights, unknown backbone, unresolvable paths, bad config values.
class ConfigError : public Error {
public:
    using Error::Error;
};

// A data file whose declared shape disagrees with its contents or the config.
class SchemaError : public Error {
public:
    using Error::Error;
};

// Tensor/matrix shape mismatch at a model boundary.
class DimensionError : public Error {
public:
    using Error::Error;
};

// Training set cannot be learned from (e.g. a single class).
class DegenerateTrainingError : public Error {
public:
    using Error::Error;
};

// Loss became non-finite; the model is rolled back to the last finite state.
class DivergenceError : public Error {
public:
    using Error::Error;
};

// Invalid SplitSpec / manifest request (bad ratios, oversize N).
class InvalidSpecError : public Error {
public:
    using Error::Error;
};

// Image bytes that cannot be decoded.
class DecodeError : public Error {
public:
    using Error::Error;
};

}  // namespace iqtk
