#pragma once

#include <stdexcept>
#include <string>

namespace balign {

// Base of every error the library raises. The CLI maps the subclasses to exit
// codes: usage/config -> 1, data/parse -> 2, numerical -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class ParseError : public DataError {
 public:
  ParseError(const std::string& message, int line)
      : DataError(line > 0 ? "line " + std::to_string(line) + ": " + message : message), line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

// Boundary with fewer than two control points.
class DegenerateBoundaryError : public DataError {
 public:
  using DataError::DataError;
};

// Boundary that produced no pixels on the target map.
class EmptyBoundaryError : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace balign
