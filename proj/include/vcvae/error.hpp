#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace vcvae {

enum class ErrorKind {
  kDimension,
  kDecomposition,
  kInvalidArgument,
  kConfig,
  kIo,
  kFormat,
  kNumeric,
  kExists,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& what)
      : Error(ErrorKind::kDimension, what) {}
};

// Cholesky failure; pivot() is the zero-based column whose pivot was not
// strictly positive.
class DecompositionError : public Error {
 public:
  DecompositionError(const std::string& what, std::size_t pivot)
      : Error(ErrorKind::kDecomposition, what), pivot_(pivot) {}
  std::size_t pivot() const noexcept { return pivot_; }

 private:
  std::size_t pivot_;
};

struct InvalidArgument : Error {
  explicit InvalidArgument(const std::string& what)
      : Error(ErrorKind::kInvalidArgument, what) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what)
      : Error(ErrorKind::kConfig, what) {}
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error(ErrorKind::kIo, what) {}
};

// Malformed file content. The reason distinguishes the IDX failure modes.
class FormatError : public Error {
 public:
  enum class Reason { kBadMagic, kTruncated, kDimensionMismatch, kOther };
  FormatError(Reason reason, const std::string& what)
      : Error(ErrorKind::kFormat, what), reason_(reason) {}
  Reason reason() const noexcept { return reason_; }

 private:
  Reason reason_;
};

struct NumericError : Error {
  explicit NumericError(const std::string& what)
      : Error(ErrorKind::kNumeric, what) {}
};

struct ExistsError : Error {
  explicit ExistsError(const std::string& what)
      : Error(ErrorKind::kExists, what) {}
};

}  // namespace vcvae
