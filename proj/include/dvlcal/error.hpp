#pragma once

#include <stdexcept>
#include <string>

namespace dvlcal {

enum class ErrorKind {
  kInvalidInput,
  kDegenerateScale,
  kEmptyInput,
  kDegenerateGeometry,
  kDivisionDegenerate,
  kConfiguration,
  kShapeMismatch,
  kInsufficientData,
  kDivergence,
  kIo,
};

const char* to_string(ErrorKind kind);

/// Single exception type for the library; `kind()` selects the failure class.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Raised by training when the loss becomes non-finite.
class DivergenceError : public Error {
 public:
  DivergenceError(int epoch, int batch, const std::string& what)
      : Error(ErrorKind::kDivergence, what), epoch_(epoch), batch_(batch) {}

  int epoch() const noexcept { return epoch_; }
  int batch() const noexcept { return batch_; }

 private:
  int epoch_;
  int batch_;
};

}  // namespace dvlcal
