#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fiqa {

// Coarse classes of failure; the CLI maps each onto an exit code.
enum class ErrorCategory { Config, Data, Divergence, Internal };

enum class ErrorKind {
  MissingFile,
  MalformedRow,
  DuplicateId,
  NonFiniteScore,
  EmptyManifest,
  DecodeFailure,
  ZeroAreaImage,
  InconsistentSpec,
  MissingPretrainedWeights,
  ShapeMismatch,
  LengthMismatch,
  NonFiniteInput,
  DegenerateInput,
  EmptyEnsemble,
  EmptyTrainSet,
  DivergedLoss,
  InvalidConfig,
  UnsupportedLayer,
  Io,
};

std::string_view to_string(ErrorKind kind);
ErrorCategory category_of(ErrorKind kind);
std::string_view to_string(ErrorCategory category);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);

  ErrorKind kind() const noexcept { return kind_; }
  ErrorCategory category() const noexcept { return category_of(kind_); }

 private:
  ErrorKind kind_;
};

}  // namespace fiqa
