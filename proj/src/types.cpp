#include "goaltrack/types.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <utility>

#include "goaltrack/error.hpp"
#include "goaltrack/events.hpp"

namespace goaltrack {
namespace {

std::string fold(std::string_view text) {
  auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  auto last = text.find_last_not_of(" \t\r\n");
  std::string out(text.substr(first, last - first + 1));
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

template <typename Enum, std::size_t N>
std::optional<Enum> lookup(const std::array<std::pair<Enum, std::string_view>, N>& table,
                           std::string_view text) {
  const std::string key = fold(text);
  for (const auto& [value, name] : table) {
    if (name == key) return value;
  }
  return std::nullopt;
}

template <typename Enum, std::size_t N>
std::string_view name_of(const std::array<std::pair<Enum, std::string_view>, N>& table,
                         Enum value) {
  for (const auto& [v, name] : table) {
    if (v == value) return name;
  }
  return "unknown";
}

constexpr std::array<std::pair<GoalType, std::string_view>, 4> kGoalTypes{{
    {GoalType::Question, "question"},
    {GoalType::Request, "request"},
    {GoalType::Offer, "offer"},
    {GoalType::Suggestion, "suggestion"},
}};

constexpr std::array<std::pair<EvaluationCategory, std::string_view>, 3> kCategories{{
    {EvaluationCategory::Confirm, "confirm"},
    {EvaluationCategory::Contradict, "contradict"},
    {EvaluationCategory::Ignore, "ignore"},
}};

constexpr std::array<std::pair<OpKind, std::string_view>, 3> kOpKinds{{
    {OpKind::Combine, "combine"},
    {OpKind::Replace, "replace"},
    {OpKind::Keep, "keep"},
}};

constexpr std::array<std::pair<Stage, std::string_view>, 4> kStages{{
    {Stage::Infer, "infer"},
    {Stage::Merge, "merge"},
    {Stage::Evaluate, "evaluate"},
    {Stage::Control, "control"},
}};

constexpr std::array<std::pair<EventKind, std::string_view>, 14> kEventKinds{{
    {EventKind::GoalInferred, "goal_inferred"},
    {EventKind::GoalCombined, "goal_combined"},
    {EventKind::GoalReplaced, "goal_replaced"},
    {EventKind::GoalKept, "goal_kept"},
    {EventKind::OpDropped, "op_dropped"},
    {EventKind::GoalEvaluated, "goal_evaluated"},
    {EventKind::GoalLocked, "goal_locked"},
    {EventKind::GoalUnlocked, "goal_unlocked"},
    {EventKind::GoalCompleted, "goal_completed"},
    {EventKind::GoalRestored, "goal_restored"},
    {EventKind::GoalCreated, "goal_created"},
    {EventKind::PipelineToggled, "pipeline_toggled"},
    {EventKind::StageSkipped, "stage_skipped"},
    {EventKind::Warning, "warning"},
}};

}  // namespace

std::optional<GoalId> GoalId::parse(std::string_view text) {
  if (text.size() < 2 || text.front() != 'g') return std::nullopt;
  std::uint32_t value = 0;
  auto [ptr, ec] = std::from_chars(text.data() + 1, text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size() || value == 0) {
    return std::nullopt;
  }
  return GoalId{value};
}

std::string_view to_string(GoalType type) { return name_of(kGoalTypes, type); }
std::string_view to_string(EvaluationCategory category) { return name_of(kCategories, category); }
std::string_view to_string(OpKind kind) { return name_of(kOpKinds, kind); }
std::string_view to_string(Stage stage) { return name_of(kStages, stage); }
std::string_view to_string(EventKind kind) { return name_of(kEventKinds, kind); }

std::optional<GoalType> parse_goal_type(std::string_view text) { return lookup(kGoalTypes, text); }
std::optional<EvaluationCategory> parse_category(std::string_view text) {
  return lookup(kCategories, text);
}
std::optional<OpKind> parse_op_kind(std::string_view text) { return lookup(kOpKinds, text); }
std::optional<Stage> parse_stage(std::string_view text) { return lookup(kStages, text); }
std::optional<EventKind> parse_event_kind(std::string_view text) {
  return lookup(kEventKinds, text);
}

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyGoalText: return "EmptyGoalText";
    case ErrorCode::UnknownGoal: return "UnknownGoal";
    case ErrorCode::GoalNotActive: return "GoalNotActive";
    case ErrorCode::GoalAlreadyActive: return "GoalAlreadyActive";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::DoubleConsumption: return "DoubleConsumption";
    case ErrorCode::InvalidOperation: return "InvalidOperation";
    case ErrorCode::DuplicateEvaluation: return "DuplicateEvaluation";
    case ErrorCode::PreconditionViolation: return "PreconditionViolation";
    case ErrorCode::ProviderUnreachable: return "ProviderUnreachable";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::ProviderRefusal: return "ProviderRefusal";
    case ErrorCode::MalformedOutput: return "MalformedOutput";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::MissingScript: return "MissingScript";
    case ErrorCode::UnknownGoalType: return "UnknownGoalType";
    case ErrorCode::UnknownCategory: return "UnknownCategory";
    case ErrorCode::InvalidOperationName: return "InvalidOperationName";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::InsufficientSentences: return "InsufficientSentences";
    case ErrorCode::StorageFailure: return "StorageFailure";
    case ErrorCode::TurnOutOfRange: return "TurnOutOfRange";
    case ErrorCode::MalformedTranscript: return "MalformedTranscript";
    case ErrorCode::UnknownSession: return "UnknownSession";
    case ErrorCode::TurnInFlight: return "TurnInFlight";
    case ErrorCode::NoEvaluations: return "NoEvaluations";
    case ErrorCode::InvalidRequest: return "InvalidRequest";
  }
  return "Unknown";
}

bool is_backend_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::ProviderUnreachable:
    case ErrorCode::Timeout:
    case ErrorCode::ProviderRefusal:
    case ErrorCode::MalformedOutput:
    case ErrorCode::DimensionMismatch:
    case ErrorCode::MissingScript:
      return true;
    default:
      return false;
  }
}

}  // namespace goaltrack
