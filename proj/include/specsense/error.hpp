#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace specsense {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input is shorter than an operation requires.
class LengthError : public Error {
 public:
  LengthError(const std::string& what, std::size_t required)
      : Error(what + " (requires at least " + std::to_string(required) + " samples)"),
        required_(required) {}
  std::size_t required() const noexcept { return required_; }

 private:
  std::size_t required_;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Values that violate a documented type invariant (non-finite entries,
/// non-unit features, asymmetric covariances, ...).
class InvariantError : public Error {
 public:
  using Error::Error;
};

/// Iterative routine did not converge; carries the last residual.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : Error(what + " (residual " + std::to_string(residual) + ")"), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

/// Numerical failure that is not a convergence issue (e.g. an
/// eigenvalue far below zero for a matrix that must be PSD).
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Statistic is undefined for this input (zero eigenvalues, zero diagonal).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// A detector was asked to run without the prior knowledge it consumes.
class MissingPriorError : public Error {
 public:
  explicit MissingPriorError(std::string field)
      : Error("missing prior: " + field), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace specsense
