#pragma once

#include <stdexcept>
#include <string>

namespace tfbs {

// Base for every error raised by the library. Subclasses let callers map
// failures onto exit codes (usage vs data/format) without string matching.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

// Malformed or truncated files, bad magic bytes, manifest mismatches.
struct FormatError : Error {
    using Error::Error;
};

// Bad input records: unknown bases, sequences too short, empty datasets.
struct DataError : Error {
    using Error::Error;
};

struct UnsupportedInputError : DataError {
    using DataError::DataError;
};

// A metric is not defined for the given labels (e.g. a single class).
struct UndefinedMetricError : DataError {
    using DataError::DataError;
};

}  // namespace tfbs
