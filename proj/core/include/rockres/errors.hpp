#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace rockres {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible with the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value, unknown key, or mismatched checkpoint.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Image payload could not be decoded. `offset` is the byte position where
/// decoding stopped.
class DecodeError : public IoError {
 public:
  DecodeError(const std::string& what, std::uint64_t offset)
      : IoError(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Non-finite value produced while numeric checking is enabled.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace rockres
