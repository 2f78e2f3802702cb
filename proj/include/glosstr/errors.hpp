#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace glosstr {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Bad usage or configuration (unknown key, out-of-range option).
class ConfigError : public Error {
  public:
    using Error::Error;
};

/// Malformed or unusable input data. Carries the 1-based line number when known.
class FormatError : public Error {
  public:
    explicit FormatError(const std::string &what, std::size_t line = 0)
        : Error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

  private:
    std::size_t line_;
};

class EmptyCorpusError : public FormatError {
  public:
    using FormatError::FormatError;
};

class LookupError : public Error {
  public:
    using Error::Error;
};

class DomainError : public Error {
  public:
    using Error::Error;
};

/// Divergence, failed gradient check and similar numeric failures.
class NumericError : public Error {
  public:
    using Error::Error;
};

} // namespace glosstr
