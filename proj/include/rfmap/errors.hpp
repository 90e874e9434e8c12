#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rfmap {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes of two operands do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A caller-supplied argument violates a documented precondition.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Malformed or unreadable file content.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure (SVD non-convergence, singular Fourier slice, ...).
/// `slice` is the Fourier slice index involved, or -1 when not applicable.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, std::ptrdiff_t slice = -1, double condition = 0.0)
      : Error(what), slice_(slice), condition_(condition) {}

  std::ptrdiff_t slice() const noexcept { return slice_; }
  double condition() const noexcept { return condition_; }

 private:
  std::ptrdiff_t slice_;
  double condition_;
};

}  // namespace rfmap
