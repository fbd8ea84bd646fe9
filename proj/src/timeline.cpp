#include "goaltrack/timeline.hpp"

#include <set>

#include "goaltrack/serialization.hpp"

namespace goaltrack {

using nlohmann::json;

std::string_view to_string(RowKind kind) {
  switch (kind) {
    case RowKind::Inferred: return "inferred";
    case RowKind::Final: return "final";
    case RowKind::Evaluation: return "evaluation";
  }
  return "";
}

std::string_view category_icon(EvaluationCategory category) {
  switch (category) {
    case EvaluationCategory::Confirm: return "check";
    case EvaluationCategory::Contradict: return "cross";
    case EvaluationCategory::Ignore: return "prohibited";
  }
  return "";
}

namespace {

std::string node_id(int turn, RowKind row, const std::string& suffix) {
  return "t" + std::to_string(turn) + "." + std::string(to_string(row)) + "." + suffix;
}

}  // namespace

std::vector<TimelineRow> build_timeline(const std::vector<StoredEvent>& events) {
  std::vector<TimelineRow> rows;
  ConversationState state;
  std::map<GoalId, std::string> last_final;
  std::set<GoalId> previous_row;

  for (const auto& event : events) {
    const auto* record = std::get_if<TurnRecord>(&event.payload);
    if (!record) {
      fold_event(state, event.payload);
      continue;
    }
    const int turn = record->turn;
    TimelineRow inferred_row{turn, RowKind::Inferred, {}, {}};
    TimelineRow final_row{turn, RowKind::Final, {}, {}};
    TimelineRow eval_row{turn, RowKind::Evaluation, {}, {}};

    for (std::size_t i = 0; i < record->inferred.size(); ++i) {
      inferred_row.nodes.push_back({node_id(turn, RowKind::Inferred, std::to_string(i + 1)),
                                    std::nullopt, record->user_message,
                                    record->inferred[i].clause, std::nullopt});
    }
    auto inferred_node = [&](std::size_t index) { return inferred_row.nodes[index - 1].id; };

    // goal -> incoming links produced by this turn's merge
    std::map<GoalId, std::vector<std::pair<std::string, std::string>>> incoming;
    const auto pool = inferred_pool(record->inferred, turn, record->user_message);
    if (record->config.merge_enabled) {
      GoalLedger scratch = state.ledger;
      const auto existing = scratch.merge_pool();
      const MergeResult merged = scratch.apply_merge(existing, pool, record->merge_ops, turn);
      for (std::size_t k = 0; k < merged.applied.size(); ++k) {
        const auto& op = merged.applied[k];
        const GoalId outcome = merged.outcomes[k];
        const std::string kind(to_string(op.kind));
        std::optional<std::string> old_node;
        for (const auto& ref : op.consumed) {
          if (ref.pool == Pool::Existing) {
            const GoalId source = existing[ref.index - 1];
            if (auto it = last_final.find(source); it != last_final.end()) {
              old_node = it->second;
              const bool restored = op.kind == OpKind::Keep && !previous_row.count(source);
              incoming[outcome].emplace_back(it->second, restored ? "restore" : kind);
            } else {
              incoming[outcome];  // produced here, even without a drawable source
            }
          } else {
            incoming[outcome].emplace_back(inferred_node(ref.index), kind);
          }
        }
        if (op.kind != OpKind::Keep && old_node) {
          const auto* ref = &op.consumed[0];
          if (ref->pool != Pool::Inferred) ref = &op.consumed[1];
          inferred_row.links.push_back({*old_node, inferred_node(ref->index), kind});
        }
      }
    } else if (record->config.infer_enabled) {
      auto next_id = static_cast<std::uint32_t>(state.ledger.goals().size());
      for (std::size_t i = 0; i < pool.size(); ++i) {
        incoming[GoalId{++next_id}].emplace_back(inferred_node(i + 1), "keep");
      }
    }

    fold_event(state, event.payload);

    std::set<GoalId> current_row;
    for (const auto& goal : state.ledger.active_goals()) {
      const std::string id = node_id(turn, RowKind::Final, goal.id.str());
      final_row.nodes.push_back({id, goal.id, record->response, goal.text, std::nullopt});
      current_row.insert(goal.id);
      if (auto it = incoming.find(goal.id); it != incoming.end()) {
        for (const auto& [source, kind] : it->second) final_row.links.push_back({source, id, kind});
        continue;
      }
      if (auto it = last_final.find(goal.id); it != last_final.end()) {
        final_row.links.push_back({it->second, id, previous_row.count(goal.id) ? "keep" : "restore"});
      }
    }

    std::map<GoalId, EvaluationCategory> categories;
    for (const auto& e : record->evaluations) {
      categories[e.goal] = e.category;
      const std::string id = node_id(turn, RowKind::Evaluation, e.goal.str());
      eval_row.nodes.push_back({id, e.goal, record->response,
                                std::string(category_icon(e.category)), e.category});
      eval_row.links.push_back({node_id(turn, RowKind::Final, e.goal.str()), id, "evaluate"});
    }
    for (auto& node : final_row.nodes) {
      if (auto it = categories.find(*node.goal); it != categories.end()) node.category = it->second;
      last_final[*node.goal] = node.id;
    }
    previous_row = std::move(current_row);

    rows.push_back(std::move(inferred_row));
    rows.push_back(std::move(final_row));
    rows.push_back(std::move(eval_row));
  }
  return rows;
}

std::vector<EventGroup> group_events(const ConversationState& state) {
  std::vector<EventGroup> groups;
  for (const auto& record : state.turns) {
    groups.push_back({record.turn, record.user_message, record.response, record.events, {}});
  }
  for (const auto& control : state.control_events) {
    if (control.turn == 0) {
      if (groups.empty() || groups.front().turn != 0) groups.insert(groups.begin(), EventGroup{});
      groups.front().controls.push_back(control);
    } else {
      for (auto& g : groups) {
        if (g.turn == control.turn) g.controls.push_back(control);
      }
    }
  }
  return groups;
}

ConversationStats compute_stats(const ConversationState& state) {
  const auto& ledger = state.ledger;
  if (ledger.evaluations().empty()) {
    throw Error(ErrorCode::NoEvaluations, "conversation has no evaluated turns");
  }
  ConversationStats stats;
  stats.turns = state.turn();
  for (int t = 1; t <= stats.turns; ++t) stats.per_turn.push_back({t, 0, 0, 0});
  std::set<GoalId> evaluated;
  for (const auto& e : ledger.evaluations()) {
    evaluated.insert(e.goal);
    if (e.turn < 1 || e.turn > stats.turns) continue;
    auto& counts = stats.per_turn[static_cast<std::size_t>(e.turn - 1)];
    switch (e.category) {
      case EvaluationCategory::Confirm: ++counts.confirm; break;
      case EvaluationCategory::Contradict: ++counts.contradict; break;
      case EvaluationCategory::Ignore: ++counts.ignore; break;
    }
  }
  for (GoalId id : evaluated) {
    const auto history = ledger.status_history(id);
    int changes = 0;
    for (std::size_t i = 1; i < history.size(); ++i) {
      if (history[i].second != history[i - 1].second) ++changes;
    }
    stats.changes_per_goal[id] = changes;
    stats.variability += changes;
  }
  return stats;
}

void to_json(json& j, const TimelineNode& v) {
  j = {{"id", v.id}, {"message", v.message}, {"label", v.label}};
  if (v.goal) j["goal"] = *v.goal;
  if (v.category) {
    j["category"] = *v.category;
    j["icon"] = category_icon(*v.category);
  }
}

void to_json(json& j, const TimelineLink& v) {
  j = {{"source", v.source}, {"target", v.target}, {"kind", v.kind}};
}

void to_json(json& j, const TimelineRow& v) {
  j = {{"turn", v.turn}, {"row", to_string(v.kind)}, {"nodes", v.nodes}, {"links", v.links}};
}

void to_json(json& j, const EventGroup& v) {
  j = {{"turn", v.turn}, {"events", v.events}, {"controls", v.controls}};
  if (v.user_message) j["user_message"] = *v.user_message;
  if (v.response) j["response"] = *v.response;
}

void to_json(json& j, const ConversationStats& v) {
  json per_turn = json::array();
  for (const auto& c : v.per_turn) {
    per_turn.push_back({{"turn", c.turn},
                        {"confirm", c.confirm},
                        {"contradict", c.contradict},
                        {"ignore", c.ignore}});
  }
  json per_goal = json::object();
  for (const auto& [goal, changes] : v.changes_per_goal) per_goal[goal.str()] = changes;
  j = {{"per_turn", per_turn},
       {"variability", v.variability},
       {"turns", v.turns},
       {"changes_per_goal", per_goal}};
}

}  // namespace goaltrack
