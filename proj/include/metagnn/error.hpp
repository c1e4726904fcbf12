#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace metagnn {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform to the primitive or layer.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A primitive was evaluated outside its domain or produced a non-finite value.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Malformed input text. `line()` is 1-based, 0 when unknown.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Well-formed input that violates a dataset or document invariant.
class SchemaError : public Error {
 public:
  using Error::Error;
};

/// Data cannot be normalized (e.g. zero variance).
class DegenerateDataError : public Error {
 public:
  using Error::Error;
};

/// Training or adaptation produced a non-finite or exploding loss.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t iteration)
      : Error(what + " (iteration " + std::to_string(iteration) + ")"), iteration_(iteration) {}
  std::size_t iteration() const { return iteration_; }

 private:
  std::size_t iteration_;
};

/// File could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace metagnn
