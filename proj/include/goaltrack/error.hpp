#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace goaltrack {

// Every failure the library reports carries one of these codes. The HTTP
// layer maps them onto status codes, the CLI onto exit codes.
enum class ErrorCode {
  // goal model
  EmptyGoalText,
  UnknownGoal,
  GoalNotActive,
  GoalAlreadyActive,
  IndexOutOfRange,
  DoubleConsumption,
  InvalidOperation,
  DuplicateEvaluation,
  // backends
  PreconditionViolation,
  ProviderUnreachable,
  Timeout,
  ProviderRefusal,
  MalformedOutput,
  DimensionMismatch,
  MissingScript,
  // pipeline
  UnknownGoalType,
  UnknownCategory,
  InvalidOperationName,
  InvalidConfig,
  // text analysis
  InsufficientSentences,
  // session store
  StorageFailure,
  TurnOutOfRange,
  MalformedTranscript,
  UnknownSession,
  TurnInFlight,
  // stats
  NoEvaluations,
  // api
  InvalidRequest,
};

std::string_view to_string(ErrorCode code);

// True for codes that originate from an LLM/embedding provider.
bool is_backend_error(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const { return code_; }

  // Raw provider text for MalformedOutput; empty otherwise.
  const std::string& raw() const { return raw_; }
  Error& with_raw(std::string raw) {
    raw_ = std::move(raw);
    return *this;
  }

  // 1-based line number for MalformedTranscript; 0 when not applicable.
  std::size_t line() const { return line_; }
  Error& with_line(std::size_t line) {
    line_ = line;
    return *this;
  }

 private:
  ErrorCode code_;
  std::string raw_;
  std::size_t line_ = 0;
};

}  // namespace goaltrack
