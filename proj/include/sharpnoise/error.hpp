#pragma once

#include <stdexcept>
#include <string>

namespace sharpnoise {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-conformable tensor shapes; the message names the op and the dims.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration or usage (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or a numerically undefined quantity (CLI exit code 4).
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed or missing dataset files (CLI exit code 3).
class DataError : public Error {
 public:
  enum class Kind { kMissingFile, kBadMagic, kTruncated, kLabelOutOfRange, kBadFormat };

  DataError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace sharpnoise
