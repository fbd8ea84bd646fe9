#include "goaltrack/goal_model.hpp"

#include <algorithm>
#include <set>

namespace goaltrack {
namespace {

PipelineEvent merge_event(int turn, EventKind kind, std::vector<GoalId> goals,
                          std::string detail = {}) {
  PipelineEvent event;
  event.turn = turn;
  event.stage = Stage::Merge;
  event.kind = kind;
  event.goals = std::move(goals);
  event.detail = std::move(detail);
  return event;
}

std::string describe(const MergeOperation& op) {
  std::string out(to_string(op.kind));
  out += '(';
  for (std::size_t i = 0; i < op.consumed.size(); ++i) {
    if (i) out += ',';
    out += op.consumed[i].pool == Pool::Existing ? "old " : "new ";
    out += std::to_string(op.consumed[i].index);
  }
  out += ')';
  return out;
}

void check_shape(const MergeOperation& op, std::size_t existing_size, std::size_t inferred_size) {
  const auto& refs = op.consumed;
  if (op.kind == OpKind::Keep) {
    if (refs.size() != 1) {
      throw Error(ErrorCode::InvalidOperation, "keep must reference exactly one goal");
    }
  } else {
    if (refs.size() != 2 || refs[0].pool == refs[1].pool) {
      throw Error(ErrorCode::InvalidOperation,
                  std::string(to_string(op.kind)) +
                      " must reference one existing and one inferred goal");
    }
  }
  for (const auto& ref : refs) {
    const std::size_t bound = ref.pool == Pool::Existing ? existing_size : inferred_size;
    if (ref.index < 1 || ref.index > bound) {
      throw Error(ErrorCode::IndexOutOfRange, "goal number " + std::to_string(ref.index) +
                                                  " outside pool of size " +
                                                  std::to_string(bound));
    }
  }
}

const PoolRef* find_ref(const MergeOperation& op, Pool pool) {
  for (const auto& ref : op.consumed) {
    if (ref.pool == pool) return &ref;
  }
  return nullptr;
}

}  // namespace

Goal& GoalLedger::append(Goal goal) {
  goal.id = GoalId{static_cast<std::uint32_t>(goals_.size() + 1)};
  goals_.push_back(std::move(goal));
  return goals_.back();
}

const Goal& GoalLedger::create_goal(std::string text, GoalType type, GoalOrigin origin, int turn) {
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
    throw Error(ErrorCode::EmptyGoalText, "goal text must be non-empty");
  }
  Goal goal;
  goal.text = std::move(text);
  goal.type = type;
  goal.origin = std::move(origin);
  goal.created_turn = turn;
  return append(std::move(goal));
}

const Goal& GoalLedger::admit(const InferredGoal& inferred, int turn) {
  return create_goal(inferred.text, inferred.type, inferred.origin, turn);
}

MergeResult GoalLedger::apply_merge(const std::vector<GoalId>& existing,
                                    const std::vector<InferredGoal>& inferred,
                                    const std::vector<MergeOperation>& ops, int turn) {
  std::set<GoalId> seen;
  for (GoalId id : existing) {
    const Goal& g = goal(id);
    if (!g.active()) {
      throw Error(ErrorCode::GoalNotActive, g.id.str() + " is not active");
    }
    if (!seen.insert(id).second) {
      throw Error(ErrorCode::DoubleConsumption, g.id.str() + " listed twice in the pool");
    }
  }
  for (const auto& item : inferred) {
    if (item.text.find_first_not_of(" \t\r\n") == std::string::npos) {
      throw Error(ErrorCode::EmptyGoalText, "inferred goal text must be non-empty");
    }
  }

  auto locked = [&](const PoolRef& ref) {
    return ref.pool == Pool::Existing && goal(existing[ref.index - 1]).locked;
  };

  MergeResult result;
  std::vector<const MergeOperation*> kept;
  for (const auto& op : ops) {
    check_shape(op, existing.size(), inferred.size());
    if (std::any_of(op.consumed.begin(), op.consumed.end(), locked)) {
      std::vector<GoalId> involved;
      if (const PoolRef* ref = find_ref(op, Pool::Existing)) {
        involved.push_back(existing[ref->index - 1]);
      }
      result.dropped.push_back(op);
      result.events.push_back(merge_event(turn, EventKind::OpDropped, std::move(involved),
                                          describe(op) + " touches a locked goal"));
      continue;
    }
    kept.push_back(&op);
  }

  std::vector<bool> used_existing(existing.size(), false);
  std::vector<bool> used_inferred(inferred.size(), false);
  for (const MergeOperation* op : kept) {
    for (const auto& ref : op->consumed) {
      auto& used = ref.pool == Pool::Existing ? used_existing : used_inferred;
      if (used[ref.index - 1]) {
        throw Error(ErrorCode::DoubleConsumption,
                    std::string(ref.pool == Pool::Existing ? "existing" : "inferred") +
                        " goal " + std::to_string(ref.index) + " consumed twice");
      }
      used[ref.index - 1] = true;
    }
  }

  std::vector<MergeOperation> plan;
  plan.reserve(kept.size() + existing.size() + inferred.size());
  for (const MergeOperation* op : kept) plan.push_back(*op);
  for (std::size_t i = 0; i < existing.size(); ++i) {
    if (!used_existing[i] && !goal(existing[i]).locked) {
      plan.push_back({OpKind::Keep, {}, {{Pool::Existing, i + 1}}});
    }
  }
  for (std::size_t i = 0; i < inferred.size(); ++i) {
    if (!used_inferred[i]) plan.push_back({OpKind::Keep, {}, {{Pool::Inferred, i + 1}}});
  }

  // Everything is validated; from here on nothing throws.
  for (auto& op : plan) {
    if (op.kind == OpKind::Keep) {
      const PoolRef& ref = op.consumed.front();
      GoalId id;
      if (ref.pool == Pool::Existing) {
        id = existing[ref.index - 1];
        op.updated_text = goal(id).text;
      } else {
        const InferredGoal& item = inferred[ref.index - 1];
        id = admit(item, turn).id;
        op.updated_text = item.text;
        result.created.push_back(id);
      }
      result.events.push_back(merge_event(turn, EventKind::GoalKept, {id}));
      result.outcomes.push_back(id);
      continue;
    }

    const GoalId old_id = existing[find_ref(op, Pool::Existing)->index - 1];
    const InferredGoal& item = inferred[find_ref(op, Pool::Inferred)->index - 1];
    if (op.updated_text.find_first_not_of(" \t\r\n") == std::string::npos) {
      op.updated_text = item.text;
    }
    Goal successor;
    successor.text = op.updated_text;
    successor.type = item.type;
    successor.origin = item.origin;
    successor.parents = {old_id};
    successor.created_turn = turn;
    const GoalId new_id = append(std::move(successor)).id;
    mutable_goal(old_id).superseded_by = new_id;
    result.created.push_back(new_id);
    result.outcomes.push_back(new_id);
    result.events.push_back(merge_event(
        turn, op.kind == OpKind::Combine ? EventKind::GoalCombined : EventKind::GoalReplaced,
        {new_id, old_id}));
  }
  result.applied = std::move(plan);
  return result;
}

const Goal& GoalLedger::lock_goal(GoalId id) {
  Goal& g = mutable_goal(id);
  if (!g.active()) throw Error(ErrorCode::GoalNotActive, id.str() + " is not active");
  g.locked = true;
  return g;
}

const Goal& GoalLedger::unlock_goal(GoalId id) {
  Goal& g = mutable_goal(id);
  g.locked = false;
  return g;
}

const Goal& GoalLedger::complete_goal(GoalId id) {
  Goal& g = mutable_goal(id);
  if (!g.active()) throw Error(ErrorCode::GoalNotActive, id.str() + " is not active");
  g.completed = true;
  return g;
}

const Goal& GoalLedger::restore_goal(GoalId id) {
  Goal& g = mutable_goal(id);
  if (g.active()) throw Error(ErrorCode::GoalAlreadyActive, id.str() + " is already active");
  // The successor of a superseded goal stays active; both coexist.
  g.superseded_by.reset();
  g.completed = false;
  return g;
}

void GoalLedger::record_evaluation(Evaluation evaluation) {
  const Goal& g = goal(evaluation.goal);
  if (!g.active()) {
    throw Error(ErrorCode::GoalNotActive, g.id.str() + " cannot be evaluated while inactive");
  }
  for (const auto& e : evaluations_) {
    if (e.goal == evaluation.goal && e.message == evaluation.message) {
      throw Error(ErrorCode::DuplicateEvaluation,
                  g.id.str() + " already evaluated on " + evaluation.message.value);
    }
  }
  evaluations_.push_back(std::move(evaluation));
}

std::vector<Goal> GoalLedger::active_goals() const {
  std::vector<Goal> out;
  std::copy_if(goals_.begin(), goals_.end(), std::back_inserter(out),
               [](const Goal& g) { return g.active(); });
  return out;
}

std::vector<GoalId> GoalLedger::merge_pool() const {
  std::vector<GoalId> out;
  for (const auto& g : goals_) {
    if (g.active() && !g.locked) out.push_back(g.id);
  }
  return out;
}

std::vector<std::pair<int, EvaluationCategory>> GoalLedger::status_history(GoalId id) const {
  goal(id);
  std::vector<std::pair<int, EvaluationCategory>> out;
  for (const auto& e : evaluations_) {
    if (e.goal == id) out.emplace_back(e.turn, e.category);
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

std::vector<Evaluation> GoalLedger::evaluations_for(GoalId id) const {
  goal(id);
  std::vector<Evaluation> out;
  std::copy_if(evaluations_.begin(), evaluations_.end(), std::back_inserter(out),
               [&](const Evaluation& e) { return e.goal == id; });
  std::stable_sort(out.begin(), out.end(),
                   [](const Evaluation& a, const Evaluation& b) { return a.turn < b.turn; });
  return out;
}

const Goal* GoalLedger::find(GoalId id) const {
  if (id.value == 0 || id.value > goals_.size()) return nullptr;
  return &goals_[id.value - 1];
}

const Goal& GoalLedger::goal(GoalId id) const {
  if (const Goal* g = find(id)) return *g;
  throw Error(ErrorCode::UnknownGoal, "unknown goal " + id.str());
}

Goal& GoalLedger::mutable_goal(GoalId id) { return const_cast<Goal&>(goal(id)); }

}  // namespace goaltrack
