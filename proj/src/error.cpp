#include "fiqa/error.hpp"

namespace fiqa {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MissingFile: return "MissingFile";
    case ErrorKind::MalformedRow: return "MalformedRow";
    case ErrorKind::DuplicateId: return "DuplicateId";
    case ErrorKind::NonFiniteScore: return "NonFiniteScore";
    case ErrorKind::EmptyManifest: return "EmptyManifest";
    case ErrorKind::DecodeFailure: return "DecodeFailure";
    case ErrorKind::ZeroAreaImage: return "ZeroAreaImage";
    case ErrorKind::InconsistentSpec: return "InconsistentSpec";
    case ErrorKind::MissingPretrainedWeights: return "MissingPretrainedWeights";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::NonFiniteInput: return "NonFiniteInput";
    case ErrorKind::DegenerateInput: return "DegenerateInput";
    case ErrorKind::EmptyEnsemble: return "EmptyEnsemble";
    case ErrorKind::EmptyTrainSet: return "EmptyTrainSet";
    case ErrorKind::DivergedLoss: return "DivergedLoss";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::UnsupportedLayer: return "UnsupportedLayer";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

ErrorCategory category_of(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidConfig:
    case ErrorKind::InconsistentSpec:
    case ErrorKind::MissingPretrainedWeights:
      return ErrorCategory::Config;
    case ErrorKind::MissingFile:
    case ErrorKind::MalformedRow:
    case ErrorKind::DuplicateId:
    case ErrorKind::NonFiniteScore:
    case ErrorKind::EmptyManifest:
    case ErrorKind::DecodeFailure:
    case ErrorKind::ZeroAreaImage:
    case ErrorKind::EmptyTrainSet:
    case ErrorKind::DegenerateInput:
    case ErrorKind::Io:
      return ErrorCategory::Data;
    case ErrorKind::DivergedLoss:
      return ErrorCategory::Divergence;
    default:
      return ErrorCategory::Internal;
  }
}

std::string_view to_string(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::Config: return "CONFIG_ERROR";
    case ErrorCategory::Data: return "DATA_ERROR";
    case ErrorCategory::Divergence: return "TRAINING_DIVERGED";
    case ErrorCategory::Internal: return "INTERNAL_ERROR";
  }
  return "INTERNAL_ERROR";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message),
      kind_(kind) {}

}  // namespace fiqa
