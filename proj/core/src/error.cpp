// SPDX-License-Identifier: Apache-2.0

#include "epiview/error.hpp"

namespace epiview {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::TooFewCorrespondences: return "TooFewCorrespondences";
    case ErrorCode::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::DegenerateLine: return "DegenerateLine";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::InvalidTensor: return "InvalidTensor";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::TruncatedPayload: return "TruncatedPayload";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::AnomalousTrainSample: return "AnomalousTrainSample";
    case ErrorCode::DegenerateRig: return "DegenerateRig";
    case ErrorCode::MissingMaskPair: return "MissingMaskPair";
    case ErrorCode::StaleCache: return "StaleCache";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::NoEligibleSupportToken: return "NoEligibleSupportToken";
    case ErrorCode::EmptyTrainSplit: return "EmptyTrainSplit";
    case ErrorCode::EmptyView: return "EmptyView";
    case ErrorCode::EmptyBank: return "EmptyBank";
    case ErrorCode::SingleClass: return "SingleClass";
    case ErrorCode::NoPositives: return "NoPositives";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::NumericFailure: return "NumericFailure";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message),
      code_(code) {}

void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace epiview
