#pragma once

#include <stdexcept>
#include <string>

namespace mlnood {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input: bad files, invariant violations, schema mismatches.
class DataError : public Error {
 public:
  using Error::Error;
};

// A requested computation exceeds a configured resource guard
// (semantic space cap, integer overflow).
class CapacityError : public DataError {
 public:
  using DataError::DataError;
};

// Non-finite values or optimizer failure.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Parse / lex failure in the constraint language, with a byte offset into
// the source text.
class SyntaxError : public DataError {
 public:
  SyntaxError(const std::string& what, std::size_t offset)
      : DataError(what + " at offset " + std::to_string(offset)), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace mlnood
