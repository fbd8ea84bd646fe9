#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "goaltrack/types.hpp"

namespace goaltrack {

enum class Stage { Infer, Merge, Evaluate, Control };

enum class EventKind {
  GoalInferred,
  GoalCombined,
  GoalReplaced,
  GoalKept,
  OpDropped,
  GoalEvaluated,
  GoalLocked,
  GoalUnlocked,
  GoalCompleted,
  GoalRestored,
  GoalCreated,
  PipelineToggled,
  StageSkipped,
  Warning,
};

std::string_view to_string(Stage stage);
std::string_view to_string(EventKind kind);
std::optional<Stage> parse_stage(std::string_view text);
std::optional<EventKind> parse_event_kind(std::string_view text);

// One entry of the pipeline's event log. `goals` lists the goals the event
// is about; for combine/replace the successor comes first, followed by the
// goals it consumed.
struct PipelineEvent {
  int turn = 0;
  Stage stage = Stage::Control;
  EventKind kind = EventKind::Warning;
  std::vector<GoalId> goals;
  std::optional<MessageId> message;
  std::string detail;

  bool operator==(const PipelineEvent&) const = default;
};

}  // namespace goaltrack
