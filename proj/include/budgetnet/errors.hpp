#pragma once

#include <stdexcept>
#include <string>

namespace bnet {

// Base class for everything thrown on purpose by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid hyperparameter / malformed or contradictory configuration.
struct ConfigError : Error {
    using Error::Error;
};

// Dataset problems: missing files, truncated records, bad labels.
struct DataError : Error {
    using Error::Error;
};

// Malformed serialized state (checkpoints and friends).
struct FormatError : Error {
    using Error::Error;
};

// API misuse: wrong shapes, out-of-range arguments, bad call sequences.
struct UsageError : Error {
    using Error::Error;
};

// Numerical breakdown: NaN/Inf where finite values are required.
struct NumericError : Error {
    using Error::Error;
};

}  // namespace bnet
