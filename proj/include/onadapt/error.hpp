#pragma once

#include <stdexcept>
#include <string>

namespace onadapt {

/// Invalid configuration or mismatched dimensions. Maps to CLI exit code 2.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Bad argument to an operation (empty inputs, out-of-range horizons).
class ArgumentError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// The operation is not defined for this model or adapter.
class UnsupportedError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// A linear solve or recursion produced an unusable result.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Offline training diverged.
class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input file. The message carries the offending line number.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t line)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

}  // namespace onadapt
