#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace clab {

/// Base class for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Caller violated a contract (bad arguments, wrong call sequence).
struct UsageError : Error {
    explicit UsageError(const std::string& msg) : Error(msg) {}
};

/// Tensor shapes incompatible with the requested operation.
struct DimensionError : UsageError {
    explicit DimensionError(const std::string& msg) : UsageError(msg) {}
};

/// Malformed input data (missing files, bad labels, inconsistent dims).
struct DataError : Error {
    explicit DataError(const std::string& msg) : Error(msg) {}
};

/// A bitstream failed to decode; byte_offset points at the offending read.
struct CorruptStreamError : Error {
    size_t byte_offset;
    CorruptStreamError(const std::string& msg, size_t offset)
        : Error(msg + " (byte offset " + std::to_string(offset) + ")"),
          byte_offset(offset) {}
};

/// Training diverged or hit a guard; step records where.
struct TrainingError : Error {
    long step;
    TrainingError(const std::string& msg, long at_step)
        : Error(msg + " (step " + std::to_string(at_step) + ")"), step(at_step) {}
};

/// Scene generation could not satisfy the spec (e.g. object placement).
struct GenerationError : Error {
    explicit GenerationError(const std::string& msg) : Error(msg) {}
};

}  // namespace clab
