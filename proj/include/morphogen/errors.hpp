#pragma once

#include <stdexcept>
#include <string>

namespace morphogen {

enum class ErrorCode {
  ShapeMismatch,
  NonFiniteInput,
  InvalidArgument,
  BadMagic,
  TruncatedPayload,
  UnsupportedVersion,
  DegenerateInput,
  UnpreprocessedInput,
  DimensionMismatch,
  StepOutOfRange,
  StrideInvalid,
  GeometryMismatch,
  CheckpointMismatch,
  CheckpointMissing,
  ConstantInput,
  EmptySurface,
  OpenMesh,
  EmptyRing,
  ZeroRingMean,
  InsufficientPoints,
  AllTies,
  EmptyInput,
  ZeroVariance,
  MissingControls,
  SingularCovariance,
  NonPsd,
  EmptyKnownPairs,
  MissingConditioning,
  EmptyDataset,
  NanLoss,
  TapeConsumed,
  NotScalar,
  MissingGrad,
  Io,
  Config,
};

// Single exception type carrying a machine-checkable code plus a message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& msg)
      : std::runtime_error(msg), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& msg) {
  throw Error(code, msg);
}

}  // namespace morphogen
