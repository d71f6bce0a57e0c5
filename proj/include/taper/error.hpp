#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace taper {

// Base class for every error thrown by the library.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Mismatched or invalid tensor/layer extents.
struct ShapeError : Error {
    using Error::Error;
};

// Out-of-range label or filter index.
struct IndexError : Error {
    using Error::Error;
};

// Violated API precondition (e.g. backward on a non-scalar loss).
struct ContractError : Error {
    using Error::Error;
};

// Malformed on-disk data. `offset` is the byte position where parsing failed,
// or npos when the failure is not tied to a position (e.g. missing file).
struct FormatError : Error {
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

    FormatError(const std::string& msg, std::size_t offset_ = npos)
        : Error(offset_ == npos ? msg : msg + " (at byte offset " + std::to_string(offset_) + ")"),
          offset(offset_) {}

    std::size_t offset;
};

// Invalid NetworkSpec (shape inference failure, missing scaling host, ...).
struct SpecError : Error {
    using Error::Error;
};

// Bad config file or CLI usage.
struct ConfigError : Error {
    using Error::Error;
};

// NaN/Inf encountered where finite values are required.
struct NumericError : Error {
    using Error::Error;
};

// Degenerate statistics or state (batch too small for variance, all gammas zero).
struct DegenerateError : Error {
    using Error::Error;
};

// Diversity of a near-zero-norm filter pair is undefined.
struct UndefinedDiversityError : Error {
    using Error::Error;
};

// A compaction plan would leave some layer with zero surviving filters.
struct CompactionError : Error {
    CompactionError(const std::string& msg, std::size_t layer_)
        : Error(msg), layer(layer_) {}

    std::size_t layer;
};

}  // namespace taper
