#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace voxelenc {

// Root of every error raised by the toolkit. The CLI maps validation errors
// to exit code 2 and everything else to exit code 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual bool is_validation() const noexcept { return false; }
};

// Bad input: malformed files, wrong shapes, out-of-range arguments.
class ValidationError : public Error {
 public:
  using Error::Error;
  bool is_validation() const noexcept override { return true; }
};

class ArgumentError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class FormatError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class CorruptionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class IndexError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class DomainError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Rank-deficient design with an unpenalised solve.
class DegenerateSolutionError : public Error {
 public:
  DegenerateSolutionError(const std::string& what, std::size_t null_dimension)
      : Error(what), null_dimension_(null_dimension) {}
  std::size_t null_dimension() const noexcept { return null_dimension_; }

 private:
  std::size_t null_dimension_;
};

class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double final_delta)
      : Error(what), final_delta_(final_delta) {}
  double final_delta() const noexcept { return final_delta_; }

 private:
  double final_delta_;
};

// Paired test with zero spread but non-zero mean difference.
class DegenerateTestError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, std::size_t step)
      : Error(what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace voxelenc
