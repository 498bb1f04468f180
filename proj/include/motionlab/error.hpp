#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace motionlab {

enum class ErrorCode {
  NonfiniteInput,
  SkeletonMismatch,
  NearPiSingularity,
  NotARotation,
  DegenerateBone,
  LengthMismatch,
  DegenerateConfiguration,
  HorizonOutOfRange,
  ShapeMismatch,
  NotScalarLoss,
  BadNormalization,
  BehindCamera,
  TooShort,
  ParseError,
  SchemaVersionMismatch,
  ConfigMismatch,
  InsufficientFrames,
  ConfigError,
  Io,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Exception carrying a machine-readable code; `what()` has the human-readable detail.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace motionlab
