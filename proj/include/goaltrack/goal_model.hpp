#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "goaltrack/error.hpp"
#include "goaltrack/events.hpp"
#include "goaltrack/types.hpp"

namespace goaltrack {

struct InferredOrigin {
  int turn = 0;
  MessageId message;
  std::optional<CharRange> span;  // grounded clause in the user message

  bool operator==(const InferredOrigin&) const = default;
};
struct UserCreatedOrigin {
  bool operator==(const UserCreatedOrigin&) const = default;
};
struct PreloadedOrigin {
  bool operator==(const PreloadedOrigin&) const = default;
};

using GoalOrigin = std::variant<InferredOrigin, UserCreatedOrigin, PreloadedOrigin>;

struct Goal {
  GoalId id;
  std::string text;
  GoalType type = GoalType::Request;
  GoalOrigin origin = UserCreatedOrigin{};
  bool locked = false;
  bool completed = false;
  std::optional<GoalId> superseded_by;
  std::vector<GoalId> parents;  // goals consumed to produce this one
  int created_turn = 0;

  bool active() const { return !superseded_by && !completed; }

  bool operator==(const Goal&) const = default;
};

// A goal proposed by the inference stage that is not in the ledger yet.
struct InferredGoal {
  std::string text;
  GoalType type = GoalType::Request;
  InferredOrigin origin;

  bool operator==(const InferredGoal&) const = default;
};

enum class Pool { Existing, Inferred };

// Reference into one of the two merge pools; `index` is 1-based.
struct PoolRef {
  Pool pool = Pool::Existing;
  std::size_t index = 1;

  bool operator==(const PoolRef&) const = default;
};

struct MergeOperation {
  OpKind kind = OpKind::Keep;
  std::string updated_text;
  std::vector<PoolRef> consumed;

  bool operator==(const MergeOperation&) const = default;
};

struct EvidenceExample {
  std::string text;
  std::optional<CharRange> span;
  bool grounded = false;

  bool operator==(const EvidenceExample&) const = default;
};

struct Evaluation {
  GoalId goal;
  MessageId message;  // the assistant response that was judged
  int turn = 0;
  EvaluationCategory category = EvaluationCategory::Ignore;
  std::string explanation;
  std::vector<EvidenceExample> examples;

  bool operator==(const Evaluation&) const = default;
};

struct MergeResult {
  // Ops that took effect, including synthesized keeps, in application order.
  std::vector<MergeOperation> applied;
  // Goal each applied op resulted in: the kept goal or the new successor.
  std::vector<GoalId> outcomes;
  std::vector<MergeOperation> dropped;
  std::vector<PipelineEvent> events;
  std::vector<GoalId> created;
};

// Append-only record of every goal, its lineage through merges and its
// evaluations. All mutators either succeed completely or throw with the
// ledger unchanged.
class GoalLedger {
 public:
  const Goal& create_goal(std::string text, GoalType type, GoalOrigin origin, int turn);

  // Admits an inferred goal directly, bypassing merge.
  const Goal& admit(const InferredGoal& inferred, int turn);

  // `existing` lists goal ids addressed by PoolRef{Existing, i}; `inferred`
  // is addressed by PoolRef{Inferred, i}. Ops that touch a locked goal are
  // dropped; unlocked pool members that no op mentions get a synthesized keep.
  MergeResult apply_merge(const std::vector<GoalId>& existing,
                          const std::vector<InferredGoal>& inferred,
                          const std::vector<MergeOperation>& ops, int turn);

  const Goal& lock_goal(GoalId id);
  const Goal& unlock_goal(GoalId id);
  const Goal& complete_goal(GoalId id);
  const Goal& restore_goal(GoalId id);

  void record_evaluation(Evaluation evaluation);

  // Creation order, excluding completed and superseded goals.
  std::vector<Goal> active_goals() const;
  // Active goals that a merge may consume.
  std::vector<GoalId> merge_pool() const;

  std::vector<std::pair<int, EvaluationCategory>> status_history(GoalId id) const;
  std::vector<Evaluation> evaluations_for(GoalId id) const;

  const Goal& goal(GoalId id) const;
  const Goal* find(GoalId id) const;
  const std::vector<Goal>& goals() const { return goals_; }
  const std::vector<Evaluation>& evaluations() const { return evaluations_; }

  bool operator==(const GoalLedger&) const = default;

 private:
  Goal& mutable_goal(GoalId id);
  Goal& append(Goal goal);

  std::vector<Goal> goals_;
  std::vector<Evaluation> evaluations_;
};

}  // namespace goaltrack
