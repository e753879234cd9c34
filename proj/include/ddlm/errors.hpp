#pragma once

#include <stdexcept>
#include <string>

namespace ddlm {

// Error taxonomy. Every throwing site names the offending values in the
// message; callers that need to distinguish categories catch the subtype.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Incompatible tensor shapes (both shapes are named in the message).
struct ShapeError : Error {
    using Error::Error;
};

// Non-finite values where finite ones are required.
struct NumericError : Error {
    using Error::Error;
};

// API misuse: wrong mode, non-scalar backward, bad argument range.
struct UsageError : Error {
    using Error::Error;
};

// Malformed data: out-of-range token ids, unknown characters.
struct DataError : Error {
    using Error::Error;
};

// Sequence or template exceeds a configured capacity.
struct CapacityError : Error {
    using Error::Error;
};

// Training aborted (non-finite loss or gradient); message carries the
// step number and batch identifier or parameter name.
struct TrainingError : Error {
    using Error::Error;
};

// File I/O and serialization failures, with path context.
struct IoError : Error {
    using Error::Error;
};

}  // namespace ddlm
