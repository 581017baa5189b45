#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace hyperada {

/// Base class for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Point on or outside the ball boundary, mismatched dimensions or curvature.
class GeometryError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument to an operation (empty input, bad weights, bad config).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Numerical failure such as step-size underflow in the adaptive solver.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Budget exhausted or nothing left to select.
class BudgetError : public Error {
 public:
  using Error::Error;
};

/// Malformed file. Carries the byte offset at which parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace hyperada
