#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mst {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or extent mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// API misuse: calling an operation outside its preconditions.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Sequence longer than a model's positional capacity.
class CapacityError : public Error {
 public:
  using Error::Error;
};

/// Input value outside its admissible domain (e.g. a rating of 7).
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf encountered, or a metric that is undefined for the given input.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed binary file. `offset` is the byte position where decoding failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace mst
