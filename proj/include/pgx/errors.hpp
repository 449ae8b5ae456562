#pragma once

#include <stdexcept>
#include <string>

namespace pgx {

// Error taxonomy. The CLI maps ValidationError/ShapeError/DomainError to
// exit code 1 and IoError to exit code 2.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes; the message names both shapes.
struct ShapeError : Error {
    using Error::Error;
};

// Input outside an operation's documented domain (log of a nonpositive
// value, division by zero, nonpositive survival time, ...).
struct DomainError : Error {
    using Error::Error;
};

// Bad configuration, malformed file contents, contract violations.
struct ValidationError : Error {
    using Error::Error;
};

// Filesystem-level failures; the message names the path.
struct IoError : Error {
    using Error::Error;
};

}  // namespace pgx
