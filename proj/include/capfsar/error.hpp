#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace capfsar {

/// Broad error categories. The CLI maps each one to a distinct exit code.
enum class ErrorKind {
  dimension,
  contract,
  degenerate_input,
  format,
  corruption,
  sampling,
  config,
  numeric,
  oracle_scope,
  io,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error(ErrorKind::dimension, what) {}
};

class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error(ErrorKind::contract, what) {}
};

class DegenerateInputError : public Error {
 public:
  explicit DegenerateInputError(const std::string& what)
      : Error(ErrorKind::degenerate_input, what) {}
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error(ErrorKind::format, what) {}
};

/// Raised when a file is shorter than its own header claims. Carries the byte
/// offset at which the reader ran out of data.
class CorruptionError : public Error {
 public:
  CorruptionError(const std::string& what, std::size_t offset)
      : Error(ErrorKind::corruption, what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class SamplingError : public Error {
 public:
  explicit SamplingError(const std::string& what) : Error(ErrorKind::sampling, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

class OracleScopeError : public Error {
 public:
  explicit OracleScopeError(const std::string& what) : Error(ErrorKind::oracle_scope, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

}  // namespace capfsar
