// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace epiview {

enum class ErrorCode {
  // geometry
  TooFewCorrespondences,
  DegenerateConfiguration,
  IndexOutOfRange,
  DegenerateLine,
  // features / io
  IoError,
  InvalidTensor,
  BadMagic,
  VersionMismatch,
  TruncatedPayload,
  SchemaError,
  ShapeMismatch,
  AnomalousTrainSample,
  // synth
  DegenerateRig,
  // attention
  MissingMaskPair,
  StaleCache,
  // pretrain
  TooFewPoints,
  NoEligibleSupportToken,
  EmptyTrainSplit,
  // membank
  EmptyView,
  EmptyBank,
  // metrics
  SingleClass,
  NoPositives,
  // pipeline
  InvalidArgument,
  NumericFailure,
};

std::string_view to_string(ErrorCode code);

/// Exception type thrown by every epiview operation. `code()` identifies the
/// failure class so callers (and the CLI exit-code mapping) can branch on it.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

}  // namespace epiview
