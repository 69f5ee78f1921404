#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace diffprior {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on an argument was violated (bad dims, singular affine, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// The input is structurally valid but carries no usable information,
/// e.g. normalizing a constant volume.
class DegenerateInput : public Error {
 public:
  using Error::Error;
};

/// A computation produced a non-finite value. `step()` carries the iteration
/// index when the failure happened inside an iterative procedure.
class NumericRangeError : public Error {
 public:
  explicit NumericRangeError(const std::string& what, std::optional<std::size_t> step = std::nullopt)
      : Error(step ? what + " (step " + std::to_string(*step) + ")" : what), step_(step) {}

  std::optional<std::size_t> step() const noexcept { return step_; }

 private:
  std::optional<std::size_t> step_;
};

/// Training loss exceeded the divergence threshold.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, std::size_t step)
      : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// Malformed file contents (bad magic, truncated payload, unsupported type).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// The operating system refused a read or write.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace diffprior
