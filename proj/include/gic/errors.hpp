#pragma once

#include <stdexcept>
#include <string>

namespace gic {

/// Base class for every error thrown by the library. The CLI maps the
/// concrete category to a process exit code, so throw the most specific
/// subclass that applies.
struct GicError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Bad configuration: unknown mode strings, invalid hyperparameters,
/// missing required options. CLI exit code 2.
struct ConfigError : GicError {
    using GicError::GicError;
};

/// Bad data: malformed files, shape mismatches, out-of-range indices,
/// non-finite inputs. CLI exit code 3.
struct DataError : GicError {
    using GicError::GicError;
};

/// Tensor shape disagreement between an operation's arguments.
struct ShapeError : DataError {
    using DataError::DataError;
};

/// Malformed serialized artifact (dataset, checkpoint, groups file).
struct FormatError : DataError {
    using DataError::DataError;
};

/// Index outside the valid range of a dataset or group table.
struct IndexError : DataError {
    using DataError::DataError;
};

/// Mathematical precondition violated (absolute continuity, nonpositive
/// variance, probabilities that do not normalize).
struct DomainError : DataError {
    using DataError::DataError;
};

/// Operation invoked in the wrong order, e.g. backward without a matching
/// forward trace. CLI exit code 4.
struct StateError : GicError {
    using GicError::GicError;
};

/// Training failure: non-finite losses or gradients, diverging optimizer.
/// CLI exit code 4.
struct TrainingError : GicError {
    using GicError::GicError;
};

} // namespace gic
