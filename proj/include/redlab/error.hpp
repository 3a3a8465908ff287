#pragma once

#include <stdexcept>
#include <string>

namespace redlab {

/// Broad failure classes. The CLI maps these onto process exit codes.
enum class ErrorKind {
  usage,       // bad arguments or configuration
  data,        // malformed input, unknown names, insufficient coverage
  numerical,   // non-finite values, divergence, undefined ratios
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Argument outside its documented range (e.g. encoder count 0 or > 16).
class BoundsError : public Error {
 public:
  explicit BoundsError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

/// A caller-side precondition was violated.
class PreconditionError : public Error {
 public:
  explicit PreconditionError(const std::string& what) : Error(ErrorKind::data, what) {}
};

/// Input file could not be parsed or failed validation.
class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what) : Error(ErrorKind::data, what) {}
};

/// Not enough subsets present to compute the requested quantity.
class CoverageError : public Error {
 public:
  explicit CoverageError(const std::string& what) : Error(ErrorKind::data, what) {}
};

/// Division by a non-positive score, NaN loss, non-finite gradient.
class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error(ErrorKind::numerical, what) {}
};

/// Invalid simulator or training configuration.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

}  // namespace redlab
