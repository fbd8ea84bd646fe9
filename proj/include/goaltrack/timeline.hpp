#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "goaltrack/session_store.hpp"

namespace goaltrack {

enum class RowKind { Inferred, Final, Evaluation };

std::string_view to_string(RowKind kind);

// check for confirm, cross for contradict, prohibited for ignore.
std::string_view category_icon(EvaluationCategory category);

struct TimelineNode {
  std::string id;  // "t<turn>.<row>.<n>"
  std::optional<GoalId> goal;
  MessageId message;  // brush-link target
  std::string label;
  std::optional<EvaluationCategory> category;
};

struct TimelineLink {
  std::string source;  // node in an earlier row
  std::string target;
  std::string kind;  // combine | replace | keep | restore | evaluate
};

struct TimelineRow {
  int turn = 0;
  RowKind kind = RowKind::Inferred;
  std::vector<TimelineNode> nodes;
  std::vector<TimelineLink> links;
};

// Three rows per committed turn, derived only from the event log.
std::vector<TimelineRow> build_timeline(const std::vector<StoredEvent>& events);

struct EventGroup {
  int turn = 0;
  std::optional<MessageId> user_message;
  std::optional<MessageId> response;
  std::vector<PipelineEvent> events;    // pipeline events of the turn
  std::vector<PipelineEvent> controls;  // user actions after the turn
};

std::vector<EventGroup> group_events(const ConversationState& state);

struct TurnStatusCounts {
  int turn = 0;
  int confirm = 0;
  int contradict = 0;
  int ignore = 0;

  bool operator==(const TurnStatusCounts&) const = default;
};

struct ConversationStats {
  std::vector<TurnStatusCounts> per_turn;
  int variability = 0;  // adjacent category changes, summed over goals
  int turns = 0;
  std::map<GoalId, int> changes_per_goal;

  bool operator==(const ConversationStats&) const = default;
};

// Throws NoEvaluations if nothing was evaluated.
ConversationStats compute_stats(const ConversationState& state);

void to_json(nlohmann::json& j, const TimelineNode& v);
void to_json(nlohmann::json& j, const TimelineLink& v);
void to_json(nlohmann::json& j, const TimelineRow& v);
void to_json(nlohmann::json& j, const EventGroup& v);
void to_json(nlohmann::json& j, const ConversationStats& v);

}  // namespace goaltrack
