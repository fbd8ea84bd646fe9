#pragma once

#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "goaltrack/events.hpp"
#include "goaltrack/goal_model.hpp"
#include "goaltrack/llm_backend.hpp"
#include "goaltrack/prompts.hpp"

namespace goaltrack {

struct PipelineConfig {
  bool infer_enabled = true;
  bool merge_enabled = true;
  bool evaluate_enabled = true;
  int evaluation_concurrency_limit = 4;

  // Merging needs inferred goals, so merge without infer is rejected.
  void validate() const;

  bool operator==(const PipelineConfig&) const = default;
};

struct InferredClause {
  std::string clause;
  GoalType type = GoalType::Request;
  std::string summary;
  std::optional<CharRange> span;
  bool grounded = false;

  // Text the clause contributes to the goal ledger.
  const std::string& goal_text() const { return summary.empty() ? clause : summary; }

  bool operator==(const InferredClause&) const = default;
};

struct Message {
  MessageId id;
  Role role = Role::User;
  int turn = 0;
  std::string text;

  bool operator==(const Message&) const = default;
};

struct TurnRecord {
  int turn = 0;
  MessageId user_message;
  MessageId response;
  std::string user_text;
  std::string response_text;
  PipelineConfig config;  // the configuration the turn ran with
  std::vector<InferredClause> inferred;
  std::vector<MergeOperation> merge_ops;  // as applied, synthesized keeps included
  std::vector<Evaluation> evaluations;
  std::vector<PipelineEvent> events;

  bool operator==(const TurnRecord&) const = default;
};

// Everything a session knows at a point in time.
struct ConversationState {
  PipelineConfig config;
  GoalLedger ledger;
  std::vector<Message> messages;
  std::vector<TurnRecord> turns;
  std::vector<PipelineEvent> control_events;

  int turn() const { return static_cast<int>(turns.size()); }

  bool operator==(const ConversationState&) const = default;
};

struct Backends {
  const Backend& chat;
  const Backend& pipeline;
};

// Optional callbacks for streaming a turn as it runs.
struct TurnObserver {
  std::function<void(std::string_view)> on_chunk;
  std::function<void(const PipelineEvent&)> on_event;
};

struct InferResult {
  std::vector<InferredClause> clauses;
  std::vector<PipelineEvent> warnings;
};

struct MergePlan {
  std::vector<MergeOperation> ops;  // validated, with keeps synthesized
  std::vector<PipelineEvent> warnings;
};

struct EvaluateResult {
  Evaluation evaluation;
  std::optional<PipelineEvent> warning;
};

InferResult infer_goals(std::string_view user_message, const Backend& backend,
                        const PromptCatalog& prompts, int turn);

// Numbered pool rendering used by the merge prompt: "1. a\n2. b".
std::string numbered_list(const std::vector<std::string>& items);

// `existing` must already exclude locked and completed goals.
MergePlan merge_goals(const std::vector<Goal>& existing, const std::vector<InferredGoal>& inferred,
                      const Backend& backend, const PromptCatalog& prompts, int turn);

// Turns a raw merge reply into validated operations against pools of the
// given sizes. Invalid operations become warnings.
MergePlan parse_merge_reply(const nlohmann::json& reply, std::size_t existing_size,
                            std::size_t inferred_size, int turn);

// `goal_index` is the 1-based position of the goal among those evaluated
// this turn; it only feeds the call context.
EvaluateResult evaluate_goal(const Goal& goal, std::string_view user_message,
                             std::string_view response, const MessageId& response_id, int turn,
                             int goal_index, const Backend& backend, const PromptCatalog& prompts);

std::vector<InferredGoal> inferred_pool(const std::vector<InferredClause>& clauses, int turn,
                                        const MessageId& user_message);

// Runs infer -> merge -> chat -> evaluate for the next turn without touching
// `state`. Commit the result with apply_turn.
TurnRecord run_turn(const ConversationState& state, std::string_view user_message,
                    const Backends& backends, const PromptCatalog& prompts,
                    const TurnObserver& observer = {});

// Folds a committed turn into the state. Pure and deterministic; replaying
// the same records reproduces the same state.
void apply_turn(ConversationState& state, const TurnRecord& record);

}  // namespace goaltrack
