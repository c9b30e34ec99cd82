#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace svfair {

enum class ErrorKind {
  kUnknownSpeaker,
  kInvalidScheme,
  kDuplicateSpeaker,
  kDuplicateUtterance,
  kMalformedRow,
  kEmptyTrialList,
  kUnmatchedTrial,
  kDimensionMismatch,
  kZeroNormVector,
  kNonFiniteValue,
  kMissingEmbedding,
  kDegenerateTrialSet,
  kLengthMismatch,
  kInsufficientData,
  kSingleNationalityCohort,
  kLabelOutOfRange,
  kInvalidMargin,
  kSupportSizeMismatch,
  kNonFiniteLoss,
  kInvalidConfig,
  kInsufficientUtterances,
  kEmptyGrid,
  kEmptySweep,
  kIo,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kUnknownSpeaker: return "UnknownSpeaker";
    case ErrorKind::kInvalidScheme: return "InvalidScheme";
    case ErrorKind::kDuplicateSpeaker: return "DuplicateSpeaker";
    case ErrorKind::kDuplicateUtterance: return "DuplicateUtterance";
    case ErrorKind::kMalformedRow: return "MalformedRow";
    case ErrorKind::kEmptyTrialList: return "EmptyTrialList";
    case ErrorKind::kUnmatchedTrial: return "UnmatchedTrial";
    case ErrorKind::kDimensionMismatch: return "DimensionMismatch";
    case ErrorKind::kZeroNormVector: return "ZeroNormVector";
    case ErrorKind::kNonFiniteValue: return "NonFiniteValue";
    case ErrorKind::kMissingEmbedding: return "MissingEmbedding";
    case ErrorKind::kDegenerateTrialSet: return "DegenerateTrialSet";
    case ErrorKind::kLengthMismatch: return "LengthMismatch";
    case ErrorKind::kInsufficientData: return "InsufficientData";
    case ErrorKind::kSingleNationalityCohort: return "SingleNationalityCohort";
    case ErrorKind::kLabelOutOfRange: return "LabelOutOfRange";
    case ErrorKind::kInvalidMargin: return "InvalidMargin";
    case ErrorKind::kSupportSizeMismatch: return "SupportSizeMismatch";
    case ErrorKind::kNonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::kInvalidConfig: return "InvalidConfig";
    case ErrorKind::kInsufficientUtterances: return "InsufficientUtterances";
    case ErrorKind::kEmptyGrid: return "EmptyGrid";
    case ErrorKind::kEmptySweep: return "EmptySweep";
    case ErrorKind::kIo: return "Io";
  }
  return "Unknown";
}

/// Every failure raised by the library. `kind()` identifies the condition;
/// parse errors additionally carry the 1-based line number of the input.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& detail,
        std::optional<std::size_t> line = std::nullopt)
      : std::runtime_error(format(kind, detail, line)), kind_(kind), line_(line) {}

  ErrorKind kind() const noexcept { return kind_; }
  std::optional<std::size_t> line() const noexcept { return line_; }

 private:
  static std::string format(ErrorKind kind, const std::string& detail,
                            std::optional<std::size_t> line) {
    std::string msg(to_string(kind));
    if (line) msg += " at line " + std::to_string(*line);
    if (!detail.empty()) msg += ": " + detail;
    return msg;
  }

  ErrorKind kind_;
  std::optional<std::size_t> line_;
};

}  // namespace svfair
