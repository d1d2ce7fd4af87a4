#pragma once

#include <stdexcept>
#include <string>

namespace pmpd {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes are incompatible with the operator.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A configuration value is outside its allowed range.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Input is well-formed but carries nothing to compute on (e.g. an empty mask).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

// A caller broke an API contract (e.g. backward from a non-scalar).
class ContractError : public Error {
 public:
  using Error::Error;
};

// NaN or Inf appeared where finite values are required.
class NumericFault : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace pmpd
