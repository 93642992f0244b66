#pragma once

#include <stdexcept>
#include <string>

namespace eraser {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Mismatched vector/matrix dimensions.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Non-finite, negative, or otherwise unusable numeric input.
class InvalidInputError : public Error {
public:
    using Error::Error;
};

/// Numeric failure during computation (divergence, overflow).
class NumericError : public Error {
public:
    using Error::Error;
};

/// Precondition on data contents violated (empty cells, bad labels).
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Malformed file contents; message carries a 1-based line number where applicable.
class ParseError : public Error {
public:
    using Error::Error;
};

/// Model/document deserialization failure (version or shape mismatch).
class LoadError : public Error {
public:
    using Error::Error;
};

/// Dataset split produced an empty side.
class SplitError : public Error {
public:
    using Error::Error;
};

/// Synthetic data spec cannot be realized.
class GenerationError : public Error {
public:
    using Error::Error;
};

/// Remote peer answered but violated the wire contract.
class ProtocolError : public Error {
public:
    using Error::Error;
};

/// Remote peer unreachable after retries.
class UpstreamError : public Error {
public:
    using Error::Error;
};

/// Bad service or run configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace eraser
