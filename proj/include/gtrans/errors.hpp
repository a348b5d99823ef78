#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gtrans {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor or layer shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Caller violated an operation precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// An operation produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Graph with an isolated node or no edges where normalization needs degree > 0.
class DegenerateGraphError : public Error {
 public:
  using Error::Error;
};

// Malformed input data, files or series that cannot be windowed.
class DataError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  TrainingError(std::size_t epoch, const std::string& what)
      : Error("epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}

  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

}  // namespace gtrans
