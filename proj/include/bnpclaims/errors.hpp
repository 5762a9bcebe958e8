#pragma once

#include <iostream>
#include <stdexcept>
#include <string>

namespace bnpc {

/// Root of the library's exception hierarchy. The three direct subclasses
/// map onto the CLI exit codes (validation 2, numeric 3, I/O 4).
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
public:
  using Error::Error;
};

class NumericError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

// validation family
class InvalidParameter : public ValidationError {
public:
  using ValidationError::ValidationError;
};

class MissingColumn : public ValidationError {
public:
  using ValidationError::ValidationError;
};

class ParseError : public ValidationError {
public:
  ParseError(const std::string &what, std::size_t line)
      : ValidationError("line " + std::to_string(line) + ": " + what),
        line_(line) {}
  [[nodiscard]] std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

class NoMatchingPolicies : public ValidationError {
public:
  using ValidationError::ValidationError;
};

class LengthMismatch : public ValidationError {
public:
  using ValidationError::ValidationError;
};

class SeriesTooShort : public ValidationError {
public:
  using ValidationError::ValidationError;
};

class TooFewBins : public ValidationError {
public:
  using ValidationError::ValidationError;
};

// numeric family
class NotPositiveDefinite : public NumericError {
public:
  using NumericError::NumericError;
};

class NoConvergence : public NumericError {
public:
  using NumericError::NumericError;
};

class RankDeficient : public NumericError {
public:
  using NumericError::NumericError;
};

class TailMassTooLarge : public NumericError {
public:
  using NumericError::NumericError;
};

class DegenerateSeries : public NumericError {
public:
  using NumericError::NumericError;
};

/// Destination for recoverable-condition warnings (Newton fallbacks and the
/// like). Set to nullptr to silence.
inline std::ostream *&warning_stream() {
  static std::ostream *stream = &std::cerr;
  return stream;
}

inline void warn(const std::string &msg) {
  if (auto *os = warning_stream())
    *os << "warning: " << msg << '\n';
}

} // namespace bnpc
