#pragma once

#include <stdexcept>
#include <string>

namespace t5lab {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor/op shape violations and out-of-range indices.
struct ShapeError : Error {
    using Error::Error;
};

// NaN/Inf produced by an op in checked mode, in a gradient, or in a loss.
struct NonFiniteError : Error {
    using Error::Error;
};

// Bad or unknown keys/values in config files and CLI arguments.
struct ConfigError : Error {
    using Error::Error;
};

// Task data problems: malformed rows, unknown labels, empty splits.
struct DataError : Error {
    using Error::Error;
};

struct CheckpointError : Error {
    enum class Kind {
        version_mismatch,
        shape_mismatch,
        truncated_blob,
        dtype_mismatch,
        bad_format,
    };

    CheckpointError(Kind k, const std::string& msg) : Error(msg), kind(k) {}

    Kind kind;
};

}  // namespace t5lab
