#pragma once

// Error taxonomy shared across the library. Everything derives from
// std::runtime_error so callers that don't care can catch one type.

#include <stdexcept>
#include <string>

namespace fieldsc {

// Shape/rank/axis mismatches and malformed tensor arguments.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

// Numeric-domain violations: log/sqrt of nonpositive values, division by
// zero, nonpositive depths, degenerate inputs rejected by contract.
struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& what) : std::runtime_error(what) {}
};

// File-format and filesystem problems (tensor files, checkpoints, datasets).
struct IoError : std::runtime_error {
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// Bad or unknown run-configuration keys/values.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace fieldsc
