#pragma once

#include <stdexcept>
#include <string>

namespace datr {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes or dimensions.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf encountered where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// An L2 normalization hit a zero (or vanishing) vector.
class ZeroNormError : public NumericError {
 public:
  using NumericError::NumericError;
};

// Caller violated an operation's precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Malformed binary file. Carries the byte offset where decoding failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& path, std::size_t offset, const std::string& what)
      : Error(path + ": at byte " + std::to_string(offset) + ": " + what), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

// Invalid corpus content: schema violations, dangling references, duplicates.
class DataError : public Error {
 public:
  using Error::Error;
};

// A train/test partition that cannot respect source groups.
class SplitError : public DataError {
 public:
  using DataError::DataError;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace datr
