#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vhash {

enum class ErrorCode {
  kBadMagic,
  kTruncatedFile,
  kUnsupportedVersion,
  kIo,
  kEmptySequence,
  kEmptyFrame,
  kWrongDimensions,
  kEmptyTrainSet,
  kDimensionMismatch,
  kDoubleNormalize,
  kShapeMismatch,
  kUnseenTimestepInTraining,
  kNonFiniteGradient,
  kNonDeterministicLoss,
  kEmptyCodes,
  kLengthMismatch,
  kBatchTooSmall,
  kNonFiniteLoss,
  kBadRange,
  kDuplicateId,
  kModeMismatch,
  kEmptyEntry,
  kEmptyQuery,
  kEmptyDatabase,
  kTooShort,
  kOutOfRange,
  kZeroDuration,
  kInvalidArgument,
};

std::string_view to_string(ErrorCode code);

// All library failures surface as this exception; `code()` identifies the
// contract that was violated.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace vhash
