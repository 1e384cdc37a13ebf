#pragma once

#include <stdexcept>
#include <string>

namespace dynint {

// Shape/dimension disagreements between operands.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad user-supplied configuration (schema, hyperparameters, fractions, ...).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Embedding lookup outside a field's vocabulary.
struct LookupError : std::runtime_error {
    explicit LookupError(const std::string& msg) : std::runtime_error(msg) {}
};

// Metric requested on degenerate input (e.g. single-class AUC).
struct UndefinedMetricError : std::runtime_error {
    explicit UndefinedMetricError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite loss/gradient or stale cache during training.
struct TrainingError : std::runtime_error {
    explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};

// Checkpoint/cache file format problems.
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace dynint
