#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace kron {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A request exceeds a configured size budget.
class CapacityError : public Error {
 public:
  using Error::Error;
};

/// A tiling, fusion or distribution parameter set is invalid for the shape.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed problem text. `position()` is the 0-based offset of the fault.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t position)
      : Error(what + " (at position " + std::to_string(position) + ")"),
        position_(position) {}

  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

/// Simulated workers exchanged parts whose geometry does not match the plan.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

}  // namespace kron
