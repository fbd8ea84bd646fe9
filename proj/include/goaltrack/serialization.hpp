#pragma once

#include <nlohmann/json.hpp>

#include "goaltrack/goal_model.hpp"
#include "goaltrack/pipeline.hpp"
#include "goaltrack/text_analysis.hpp"

// JSON mapping for the domain types. Absent optionals are omitted, so
// dump() of any of these is canonical (sorted keys, no whitespace).
namespace goaltrack {

using nlohmann::json;

void to_json(json& j, const GoalId& v);
void from_json(const json& j, GoalId& v);
void to_json(json& j, const MessageId& v);
void from_json(const json& j, MessageId& v);
void to_json(json& j, const CharRange& v);
void from_json(const json& j, CharRange& v);

void to_json(json& j, GoalType v);
void from_json(const json& j, GoalType& v);
void to_json(json& j, EvaluationCategory v);
void from_json(const json& j, EvaluationCategory& v);
void to_json(json& j, OpKind v);
void from_json(const json& j, OpKind& v);
void to_json(json& j, Stage v);
void from_json(const json& j, Stage& v);
void to_json(json& j, EventKind v);
void from_json(const json& j, EventKind& v);
void to_json(json& j, Role v);
void from_json(const json& j, Role& v);

void to_json(json& j, const GoalOrigin& v);
void from_json(const json& j, GoalOrigin& v);
void to_json(json& j, const Goal& v);
void from_json(const json& j, Goal& v);
void to_json(json& j, const PoolRef& v);
void from_json(const json& j, PoolRef& v);
void to_json(json& j, const MergeOperation& v);
void from_json(const json& j, MergeOperation& v);
void to_json(json& j, const EvidenceExample& v);
void from_json(const json& j, EvidenceExample& v);
void to_json(json& j, const Evaluation& v);
void from_json(const json& j, Evaluation& v);
void to_json(json& j, const PipelineEvent& v);
void from_json(const json& j, PipelineEvent& v);
void to_json(json& j, const GoalLedger& v);

void to_json(json& j, const PipelineConfig& v);
void from_json(const json& j, PipelineConfig& v);
void to_json(json& j, const InferredClause& v);
void from_json(const json& j, InferredClause& v);
void to_json(json& j, const Message& v);
void from_json(const json& j, Message& v);
void to_json(json& j, const TurnRecord& v);
void from_json(const json& j, TurnRecord& v);
void to_json(json& j, const ConversationState& v);

void to_json(json& j, const Sentence& v);
void to_json(json& j, const KeyPhrase& v);
void to_json(json& j, const HighlightSpan& v);

}  // namespace goaltrack
