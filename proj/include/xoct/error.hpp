#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace xoct {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not agree with an operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid convolution / resampling specification (bad groups, empty output).
class SpecError : public Error {
 public:
  using Error::Error;
};

/// Argument outside an operation's mathematical domain (log of 0, div by 0).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Rejected configuration value (config file, CLI flag, architecture).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf where the contract requires finite values.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed binary or text input. Carries the byte offset of the failure.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace xoct
