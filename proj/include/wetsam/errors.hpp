#pragma once

#include <stdexcept>
#include <string>

namespace wetsam {

/// Base of every error thrown by the library. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration value or unsupported hyperparameter combination.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Tensor shapes that cannot be combined.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Malformed binary container (bad magic, bad version, inconsistent header).
class FormatError : public Error {
public:
    using Error::Error;
};

/// Binary container shorter (or longer) than its header promises.
class LengthError : public FormatError {
public:
    using FormatError::FormatError;
};

/// File could not be opened, read completely, or written.
class IoError : public Error {
public:
    using Error::Error;
};

/// Malformed text input; carries the offending line number in the message.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Non-finite function value encountered during numerical evaluation.
class EvaluationError : public Error {
public:
    using Error::Error;
};

/// Training produced non-finite losses for a whole epoch.
class DivergenceError : public Error {
public:
    using Error::Error;
};

/// Data-dependent precondition failed (empty stacks, uncovered pixels, ...).
class DataError : public Error {
public:
    using Error::Error;
};

} // namespace wetsam
