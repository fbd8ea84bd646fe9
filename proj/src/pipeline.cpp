#include "goaltrack/pipeline.hpp"

#include <atomic>
#include <cctype>
#include <charconv>
#include <set>
#include <thread>

#include "goaltrack/grounding.hpp"

namespace goaltrack {

using nlohmann::json;

namespace {

PipelineEvent make_event(int turn, Stage stage, EventKind kind, std::vector<GoalId> goals = {},
                         std::string detail = {}) {
  PipelineEvent event;
  event.turn = turn;
  event.stage = stage;
  event.kind = kind;
  event.goals = std::move(goals);
  event.detail = std::move(detail);
  return event;
}

std::string as_text(const json& value) {
  if (value.is_string()) return value.get<std::string>();
  if (value.is_number_integer()) return std::to_string(value.get<long long>());
  return {};
}

bool blank(std::string_view s) { return s.find_first_not_of(" \t\r\n") == std::string_view::npos; }

[[noreturn]] void malformed(const std::string& stage, const std::string& what, const json& reply) {
  throw Error(ErrorCode::MalformedOutput, stage + " reply " + what).with_raw(reply.dump());
}

// A goal number from the merge reply: "2", 2, "2.", "#2", optionally
// prefixed by "old"/"new" to name the pool explicitly.
struct GoalNumber {
  std::optional<Pool> pool;
  long index = 0;
};

std::optional<GoalNumber> parse_goal_number(const json& value) {
  if (value.is_number_integer()) return GoalNumber{std::nullopt, value.get<long>()};
  if (!value.is_string()) return std::nullopt;
  std::string text = value.get<std::string>();
  for (auto& c : text) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  GoalNumber out;
  std::string_view view = text;
  while (!view.empty() && std::isspace(static_cast<unsigned char>(view.front()))) view.remove_prefix(1);
  if (view.rfind("old", 0) == 0) {
    out.pool = Pool::Existing;
    view.remove_prefix(3);
  } else if (view.rfind("new", 0) == 0) {
    out.pool = Pool::Inferred;
    view.remove_prefix(3);
  }
  while (!view.empty() && !std::isdigit(static_cast<unsigned char>(view.front()))) {
    if (std::isalpha(static_cast<unsigned char>(view.front()))) return std::nullopt;
    view.remove_prefix(1);
  }
  auto [ptr, ec] = std::from_chars(view.data(), view.data() + view.size(), out.index);
  if (ec != std::errc{}) return std::nullopt;
  std::string_view rest(ptr, static_cast<std::size_t>(view.data() + view.size() - ptr));
  for (char c : rest) {
    if (std::isalnum(static_cast<unsigned char>(c))) return std::nullopt;
  }
  return out;
}

std::string dialogue_block(std::string_view user_message, std::string_view response) {
  std::string out = "Human dialogue:\n";
  out += user_message;
  out += "\n\nAssistant response:\n";
  out += response;
  return out;
}

}  // namespace

void PipelineConfig::validate() const {
  if (merge_enabled && !infer_enabled) {
    throw Error(ErrorCode::InvalidConfig, "merge requires infer to be enabled");
  }
  if (evaluation_concurrency_limit < 1) {
    throw Error(ErrorCode::InvalidConfig, "evaluation_concurrency_limit must be positive");
  }
}

// ---------------------------------------------------------------------------
// infer

InferResult infer_goals(std::string_view user_message, const Backend& backend,
                        const PromptCatalog& prompts, int turn) {
  if (blank(user_message)) {
    throw Error(ErrorCode::PreconditionViolation, "cannot infer goals from an empty message");
  }
  const json reply = complete_structured(
      backend,
      {{Role::System, prompts.render(PromptStage::Infer)}, {Role::User, std::string(user_message)}},
      CallContext{"infer", turn});
  if (!reply.is_object() || !reply.contains("clauses") || !reply["clauses"].is_array()) {
    malformed("infer", "lacks a \"clauses\" array", reply);
  }

  InferResult result;
  for (const auto& item : reply["clauses"]) {
    if (!item.is_object()) {
      result.warnings.push_back(make_event(turn, Stage::Infer, EventKind::Warning, {},
                                           "clause entry is not an object"));
      continue;
    }
    InferredClause clause;
    clause.clause = as_text(item.value("clause", json()));
    clause.summary = as_text(item.value("summary", json()));
    const std::string type = as_text(item.value("type", json()));
    if (blank(clause.clause)) {
      result.warnings.push_back(
          make_event(turn, Stage::Infer, EventKind::Warning, {}, "clause text is empty"));
      continue;
    }
    auto parsed = parse_goal_type(type);
    if (!parsed) {
      result.warnings.push_back(make_event(turn, Stage::Infer, EventKind::Warning, {},
                                           "UnknownGoalType '" + type + "' for clause: " +
                                               clause.clause));
      continue;
    }
    clause.type = *parsed;
    clause.span = ground_span(user_message, clause.clause);
    clause.grounded = clause.span.has_value();
    result.clauses.push_back(std::move(clause));
  }
  return result;
}

// ---------------------------------------------------------------------------
// merge

std::string numbered_list(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += '\n';
    out += std::to_string(i + 1) + ". " + items[i];
  }
  return out;
}

MergePlan parse_merge_reply(const json& reply, std::size_t existing_size,
                            std::size_t inferred_size, int turn) {
  if (!reply.is_object() || !reply.contains("operations") || !reply["operations"].is_array()) {
    malformed("merge", "lacks an \"operations\" array", reply);
  }

  struct Pending {
    OpKind kind;
    std::string text;
    std::vector<GoalNumber> numbers;
  };
  MergePlan plan;
  auto warn = [&](std::string detail) {
    plan.warnings.push_back(make_event(turn, Stage::Merge, EventKind::Warning, {}, std::move(detail)));
  };

  std::vector<Pending> pending;
  for (const auto& item : reply["operations"]) {
    if (!item.is_object()) {
      warn("operation entry is not an object");
      continue;
    }
    const std::string name = as_text(item.value("operation", json()));
    auto kind = parse_op_kind(name);
    if (!kind) {
      warn("InvalidOperationName '" + name + "'; operation dropped");
      continue;
    }
    Pending op{*kind, as_text(item.value("updated_goal", json())), {}};
    const json numbers = item.value("goal_numbers", json::array());
    bool ok = numbers.is_array();
    if (ok) {
      for (const auto& n : numbers) {
        auto number = parse_goal_number(n);
        if (!number) {
          ok = false;
          break;
        }
        op.numbers.push_back(*number);
      }
    }
    const std::size_t arity = op.kind == OpKind::Keep ? 1 : 2;
    if (!ok || op.numbers.size() != arity) {
      warn(name + " has malformed goal_numbers " + numbers.dump() + "; operation dropped");
      continue;
    }
    pending.push_back(std::move(op));
  }

  std::vector<bool> used_existing(existing_size, false);
  std::vector<bool> used_inferred(inferred_size, false);
  auto in_bounds = [&](const PoolRef& ref) {
    const std::size_t bound = ref.pool == Pool::Existing ? existing_size : inferred_size;
    return ref.index >= 1 && ref.index <= bound;
  };
  auto is_used = [&](const PoolRef& ref) {
    return (ref.pool == Pool::Existing ? used_existing : used_inferred)[ref.index - 1];
  };
  auto mark = [&](const PoolRef& ref) {
    (ref.pool == Pool::Existing ? used_existing : used_inferred)[ref.index - 1] = true;
  };

  // Pairs first: their numbers are ordered old, then new.
  std::vector<std::optional<MergeOperation>> resolved(pending.size());
  for (std::size_t i = 0; i < pending.size(); ++i) {
    const auto& op = pending[i];
    if (op.kind == OpKind::Keep) continue;
    PoolRef a{op.numbers[0].pool.value_or(Pool::Existing), static_cast<std::size_t>(std::max(0L, op.numbers[0].index))};
    PoolRef b{op.numbers[1].pool.value_or(Pool::Inferred), static_cast<std::size_t>(std::max(0L, op.numbers[1].index))};
    if (a.pool == b.pool) {
      warn(std::string(to_string(op.kind)) + " names two goals from the same list; dropped");
      continue;
    }
    if (a.pool == Pool::Inferred) std::swap(a, b);
    if (!in_bounds(a) || !in_bounds(b)) {
      warn(std::string(to_string(op.kind)) + " goal number out of range; dropped");
      continue;
    }
    if (is_used(a) || is_used(b)) {
      warn(std::string(to_string(op.kind)) + " consumes an already consumed goal; dropped");
      continue;
    }
    mark(a);
    mark(b);
    resolved[i] = MergeOperation{op.kind, op.text, {a, b}};
  }
  // A bare keep number means the old goal unless that one is already taken.
  for (std::size_t i = 0; i < pending.size(); ++i) {
    const auto& op = pending[i];
    if (op.kind != OpKind::Keep) continue;
    const auto& number = op.numbers[0];
    const auto index = static_cast<std::size_t>(std::max(0L, number.index));
    std::optional<PoolRef> ref;
    if (number.pool) {
      ref = PoolRef{*number.pool, index};
    } else {
      PoolRef old_ref{Pool::Existing, index};
      PoolRef new_ref{Pool::Inferred, index};
      if (in_bounds(old_ref) && !is_used(old_ref)) {
        ref = old_ref;
      } else if (in_bounds(new_ref)) {
        ref = new_ref;
      } else if (in_bounds(old_ref)) {
        ref = old_ref;
      }
    }
    if (!ref || !in_bounds(*ref)) {
      warn("keep goal number out of range; dropped");
      continue;
    }
    if (is_used(*ref)) {
      warn("keep consumes an already consumed goal; dropped");
      continue;
    }
    mark(*ref);
    resolved[i] = MergeOperation{OpKind::Keep, op.text, {*ref}};
  }

  for (auto& op : resolved) {
    if (op) plan.ops.push_back(std::move(*op));
  }
  for (std::size_t i = 0; i < existing_size; ++i) {
    if (!used_existing[i]) plan.ops.push_back({OpKind::Keep, {}, {{Pool::Existing, i + 1}}});
  }
  for (std::size_t i = 0; i < inferred_size; ++i) {
    if (!used_inferred[i]) plan.ops.push_back({OpKind::Keep, {}, {{Pool::Inferred, i + 1}}});
  }
  return plan;
}

MergePlan merge_goals(const std::vector<Goal>& existing, const std::vector<InferredGoal>& inferred,
                      const Backend& backend, const PromptCatalog& prompts, int turn) {
  for (const auto& g : existing) {
    if (g.locked || !g.active()) {
      throw Error(ErrorCode::PreconditionViolation,
                  g.id.str() + " is locked or inactive and cannot enter the merge pool");
    }
  }
  if (existing.empty() || inferred.empty()) {
    // Nothing to reconcile; the result is forced.
    return parse_merge_reply(json{{"operations", json::array()}}, existing.size(),
                             inferred.size(), turn);
  }
  std::vector<std::string> old_items;
  std::vector<std::string> new_items;
  for (const auto& g : existing) old_items.push_back(g.text);
  for (const auto& g : inferred) new_items.push_back(g.text);
  const std::string prompt = prompts.render(
      PromptStage::Merge, {{"old_goals_str_list", numbered_list(old_items)},
                           {"new_goals_str_list", numbered_list(new_items)}});
  const json reply = complete_structured(backend, prompt, CallContext{"merge", turn});
  return parse_merge_reply(reply, existing.size(), inferred.size(), turn);
}

// ---------------------------------------------------------------------------
// evaluate

EvaluateResult evaluate_goal(const Goal& goal, std::string_view user_message,
                             std::string_view response, const MessageId& response_id, int turn,
                             int goal_index, const Backend& backend, const PromptCatalog& prompts) {
  if (!goal.active()) {
    throw Error(ErrorCode::PreconditionViolation, goal.id.str() + " is not active");
  }
  if (blank(response)) {
    throw Error(ErrorCode::PreconditionViolation, "cannot evaluate an empty response");
  }
  const json reply = complete_structured(
      backend,
      {{Role::System, prompts.render(PromptStage::Evaluate, {{"goal_str", goal.text}})},
       {Role::User, dialogue_block(user_message, response)}},
      CallContext{"evaluate", turn, goal_index});
  if (!reply.is_object()) malformed("evaluate", "is not an object", reply);

  EvaluateResult result;
  Evaluation& e = result.evaluation;
  e.goal = goal.id;
  e.message = response_id;
  e.turn = turn;
  e.explanation = as_text(reply.value("explanation", json()));
  if (blank(e.explanation)) malformed("evaluate", "has no explanation", reply);

  const std::string category = as_text(reply.value("category", json()));
  if (auto parsed = parse_category(category)) {
    e.category = *parsed;
  } else {
    e.category = EvaluationCategory::Ignore;
    result.warning = make_event(turn, Stage::Evaluate, EventKind::Warning, {goal.id},
                                "UnknownCategory '" + category + "' recorded as ignore");
  }

  const json examples = reply.value("examples", json::array());
  if (examples.is_array()) {
    for (const auto& item : examples) {
      std::string text = as_text(item);
      if (blank(text)) continue;
      EvidenceExample example;
      example.span = ground_span(response, text);
      example.grounded = example.span.has_value();
      example.text = std::move(text);
      e.examples.push_back(std::move(example));
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// turn

std::vector<InferredGoal> inferred_pool(const std::vector<InferredClause>& clauses, int turn,
                                        const MessageId& user_message) {
  std::vector<InferredGoal> pool;
  pool.reserve(clauses.size());
  for (const auto& c : clauses) {
    pool.push_back({c.goal_text(), c.type, InferredOrigin{turn, user_message, c.span}});
  }
  return pool;
}

namespace {

std::vector<std::optional<EvaluateResult>> evaluate_all(
    const std::vector<Goal>& goals, std::string_view user_message, std::string_view response,
    const MessageId& response_id, int turn, const Backend& backend, const PromptCatalog& prompts,
    int limit, std::vector<std::string>& failures) {
  std::vector<std::optional<EvaluateResult>> results(goals.size());
  failures.assign(goals.size(), {});
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < goals.size(); i = next++) {
      try {
        results[i] = evaluate_goal(goals[i], user_message, response, response_id, turn,
                                   static_cast<int>(i + 1), backend, prompts);
      } catch (const Error& e) {
        failures[i] = std::string(to_string(e.code())) + ": " + e.what();
      }
    }
  };
  const std::size_t threads =
      std::min<std::size_t>(static_cast<std::size_t>(std::max(limit, 1)), goals.size());
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  return results;
}

}  // namespace

TurnRecord run_turn(const ConversationState& state, std::string_view user_message,
                    const Backends& backends, const PromptCatalog& prompts,
                    const TurnObserver& observer) {
  if (blank(user_message)) {
    throw Error(ErrorCode::PreconditionViolation, "user message is empty");
  }
  state.config.validate();

  TurnRecord record;
  record.turn = state.turn() + 1;
  record.user_message = MessageId::user(record.turn);
  record.response = MessageId::assistant(record.turn);
  record.user_text = std::string(user_message);
  record.config = state.config;
  const int turn = record.turn;
  auto& events = record.events;

  // infer
  if (state.config.infer_enabled) {
    InferResult inferred = infer_goals(user_message, backends.pipeline, prompts, turn);
    record.inferred = std::move(inferred.clauses);
    for (const auto& c : record.inferred) {
      auto event = make_event(turn, Stage::Infer, EventKind::GoalInferred, {}, c.clause);
      event.message = record.user_message;
      events.push_back(std::move(event));
    }
    events.insert(events.end(), inferred.warnings.begin(), inferred.warnings.end());
  } else {
    events.push_back(make_event(turn, Stage::Infer, EventKind::StageSkipped));
  }

  // merge, on a scratch ledger
  GoalLedger scratch = state.ledger;
  const auto pool = inferred_pool(record.inferred, turn, record.user_message);
  if (state.config.merge_enabled) {
    const auto existing_ids = scratch.merge_pool();
    std::vector<Goal> existing;
    for (GoalId id : existing_ids) existing.push_back(scratch.goal(id));
    MergePlan plan = merge_goals(existing, pool, backends.pipeline, prompts, turn);
    events.insert(events.end(), plan.warnings.begin(), plan.warnings.end());
    MergeResult merged = scratch.apply_merge(existing_ids, pool, plan.ops, turn);
    record.merge_ops = std::move(merged.applied);
    events.insert(events.end(), merged.events.begin(), merged.events.end());
  } else {
    events.push_back(make_event(turn, Stage::Merge, EventKind::StageSkipped));
    // Infer-only: clauses are admitted as goals directly.
    std::size_t i = 0;
    for (auto& event : events) {
      if (event.kind == EventKind::GoalInferred) event.goals = {scratch.admit(pool[i++], turn).id};
    }
  }
  for (auto& event : events) {
    if (event.stage == Stage::Merge) event.message = record.response;
  }

  // chat
  std::vector<ChatMessage> history;
  for (const auto& m : state.messages) history.push_back({m.role, m.text});
  history.push_back({Role::User, record.user_text});
  record.response_text = complete_chat(backends.chat, history, CallContext{"chat", turn},
                                       [&](std::string_view text, bool end) {
                                         if (!end && !text.empty() && observer.on_chunk) {
                                           observer.on_chunk(text);
                                         }
                                       });
  if (blank(record.response_text)) {
    throw Error(ErrorCode::MalformedOutput, "chat provider returned an empty response");
  }
  if (observer.on_event) {
    for (const auto& event : events) observer.on_event(event);
  }

  // evaluate
  const std::size_t before_evaluate = events.size();
  if (state.config.evaluate_enabled) {
    const auto goals = scratch.active_goals();
    std::vector<std::string> failures;
    auto results = evaluate_all(goals, user_message, record.response_text, record.response, turn,
                                backends.pipeline, prompts,
                                state.config.evaluation_concurrency_limit, failures);
    for (std::size_t i = 0; i < goals.size(); ++i) {
      if (!results[i]) {
        auto event = make_event(turn, Stage::Evaluate, EventKind::Warning, {goals[i].id},
                                "evaluation failed: " + failures[i]);
        event.message = record.response;
        events.push_back(std::move(event));
        continue;
      }
      auto& result = *results[i];
      if (result.warning) {
        result.warning->message = record.response;
        events.push_back(*result.warning);
      }
      auto event = make_event(turn, Stage::Evaluate, EventKind::GoalEvaluated, {goals[i].id},
                              std::string(to_string(result.evaluation.category)));
      event.message = record.response;
      events.push_back(std::move(event));
      record.evaluations.push_back(std::move(result.evaluation));
    }
  } else {
    events.push_back(make_event(turn, Stage::Evaluate, EventKind::StageSkipped));
  }
  if (observer.on_event) {
    for (std::size_t i = before_evaluate; i < events.size(); ++i) observer.on_event(events[i]);
  }
  return record;
}

void apply_turn(ConversationState& state, const TurnRecord& record) {
  if (record.turn != state.turn() + 1) {
    throw Error(ErrorCode::TurnOutOfRange, "turn " + std::to_string(record.turn) +
                                               " does not follow turn " +
                                               std::to_string(state.turn()));
  }
  GoalLedger ledger = state.ledger;
  const auto pool = inferred_pool(record.inferred, record.turn, record.user_message);
  if (record.config.merge_enabled) {
    ledger.apply_merge(ledger.merge_pool(), pool, record.merge_ops, record.turn);
  } else if (record.config.infer_enabled) {
    for (const auto& item : pool) ledger.admit(item, record.turn);
  }
  for (const auto& e : record.evaluations) ledger.record_evaluation(e);

  state.ledger = std::move(ledger);
  state.messages.push_back({record.user_message, Role::User, record.turn, record.user_text});
  state.messages.push_back({record.response, Role::Assistant, record.turn, record.response_text});
  state.turns.push_back(record);
}

}  // namespace goaltrack
