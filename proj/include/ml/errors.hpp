#pragma once

#include <stdexcept>
#include <string>

namespace ml {

/// Base class for all errors thrown by this library.
struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed input file (bad row arity, non-numeric cell, ...).
struct ParseError : Error {
    using Error::Error;
};

/// Input violates a documented precondition (empty class, bad fraction, ...).
struct ValidationError : Error {
    using Error::Error;
};

/// Invalid configuration value (non-positive gamma, bad grid, ...).
struct ConfigError : Error {
    using Error::Error;
};

/// Numerical failure (PSD violation, eigendecomposition breakdown, ...).
struct NumericError : Error {
    using Error::Error;
};

/// Filesystem failure (missing file, unwritable directory, ...).
struct IoError : Error {
    using Error::Error;
};

}  // namespace ml
