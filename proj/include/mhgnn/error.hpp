#pragma once

#include <stdexcept>
#include <string>

namespace mhgnn {

/// Base of every error thrown by the library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Operand shapes do not satisfy a primitive's shape rule.
struct ShapeError : Error {
    using Error::Error;
};

/// Invalid configuration or API misuse detected before any work starts.
struct ConfigError : Error {
    using Error::Error;
};

/// Malformed, truncated or inconsistent on-disk data.
struct DataError : Error {
    using Error::Error;
};

/// NaN/Inf or a domain violation during numeric work.
struct NumericError : Error {
    using Error::Error;
};

}  // namespace mhgnn
