#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sero {

enum class ErrorCode {
  MalformedRow,
  InvariantViolation,
  EmptyDeliverySet,
  DegenerateCovariate,
  DateOutOfRange,
  EmptySupport,
  NoEarlierReport,
  ZeroWindow,
  DegenerateWeights,
  UndefinedLogArgument,
  InfeasibleSplit,
  ZeroLaggedDoses,
  NonFiniteIntegrand,
  OptimizationFailed,
  NonpositiveBound,
  NoSurveys,
  InitializationFailed,
  NonFiniteLogdensity,
  InsufficientDraws,
  MissingCountryDraws,
  ProprietyViolation,
  Config,
  Io,
  Internal,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::MalformedRow: return "MalformedRow";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
    case ErrorCode::EmptyDeliverySet: return "EmptyDeliverySet";
    case ErrorCode::DegenerateCovariate: return "DegenerateCovariate";
    case ErrorCode::DateOutOfRange: return "DateOutOfRange";
    case ErrorCode::EmptySupport: return "EmptySupport";
    case ErrorCode::NoEarlierReport: return "NoEarlierReport";
    case ErrorCode::ZeroWindow: return "ZeroWindow";
    case ErrorCode::DegenerateWeights: return "DegenerateWeights";
    case ErrorCode::UndefinedLogArgument: return "UndefinedLogArgument";
    case ErrorCode::InfeasibleSplit: return "InfeasibleSplit";
    case ErrorCode::ZeroLaggedDoses: return "ZeroLaggedDoses";
    case ErrorCode::NonFiniteIntegrand: return "NonFiniteIntegrand";
    case ErrorCode::OptimizationFailed: return "OptimizationFailed";
    case ErrorCode::NonpositiveBound: return "NonpositiveBound";
    case ErrorCode::NoSurveys: return "NoSurveys";
    case ErrorCode::InitializationFailed: return "InitializationFailed";
    case ErrorCode::NonFiniteLogdensity: return "NonFiniteLogdensity";
    case ErrorCode::InsufficientDraws: return "InsufficientDraws";
    case ErrorCode::MissingCountryDraws: return "MissingCountryDraws";
    case ErrorCode::ProprietyViolation: return "ProprietyViolation";
    case ErrorCode::Config: return "ConfigError";
    case ErrorCode::Io: return "IoError";
    case ErrorCode::Internal: return "InternalError";
  }
  return "Unknown";
}

/// Every failure surfaced by the engine carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code), message_(message) {}

  ErrorCode code() const noexcept { return code_; }
  /// The message without the code prefix.
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorCode code_;
  std::string message_;
};

}  // namespace sero
