#include "goaltrack/serialization.hpp"

namespace goaltrack {
namespace {

template <typename T>
void put_optional(json& j, const char* key, const std::optional<T>& value) {
  if (value) j[key] = *value;
}

template <typename T>
void get_optional(const json& j, const char* key, std::optional<T>& out) {
  if (auto it = j.find(key); it != j.end() && !it->is_null()) {
    out = it->get<T>();
  } else {
    out.reset();
  }
}

template <typename Enum, typename Parse>
void parse_enum(const json& j, Enum& out, Parse parse, const char* what) {
  auto parsed = parse(j.get<std::string>());
  if (!parsed) throw json::other_error::create(501, std::string("invalid ") + what, &j);
  out = *parsed;
}

}  // namespace

void to_json(json& j, const GoalId& v) { j = v.str(); }
void from_json(const json& j, GoalId& v) {
  auto parsed = GoalId::parse(j.get<std::string>());
  if (!parsed) throw json::other_error::create(501, "invalid goal id", &j);
  v = *parsed;
}
void to_json(json& j, const MessageId& v) { j = v.value; }
void from_json(const json& j, MessageId& v) { v.value = j.get<std::string>(); }
void to_json(json& j, const CharRange& v) { j = json::array({v.begin, v.end}); }
void from_json(const json& j, CharRange& v) {
  if (!j.is_array() || j.size() != 2) throw json::other_error::create(501, "invalid range", &j);
  v.begin = j[0].get<std::size_t>();
  v.end = j[1].get<std::size_t>();
  if (v.end < v.begin) throw json::other_error::create(501, "inverted range", &j);
}

void to_json(json& j, GoalType v) { j = to_string(v); }
void from_json(const json& j, GoalType& v) { parse_enum(j, v, parse_goal_type, "goal type"); }
void to_json(json& j, EvaluationCategory v) { j = to_string(v); }
void from_json(const json& j, EvaluationCategory& v) { parse_enum(j, v, parse_category, "category"); }
void to_json(json& j, OpKind v) { j = to_string(v); }
void from_json(const json& j, OpKind& v) { parse_enum(j, v, parse_op_kind, "operation"); }
void to_json(json& j, Stage v) { j = to_string(v); }
void from_json(const json& j, Stage& v) { parse_enum(j, v, parse_stage, "stage"); }
void to_json(json& j, EventKind v) { j = to_string(v); }
void from_json(const json& j, EventKind& v) { parse_enum(j, v, parse_event_kind, "event kind"); }
void to_json(json& j, Role v) { j = to_string(v); }
void from_json(const json& j, Role& v) {
  const auto s = j.get<std::string>();
  if (s == "system") v = Role::System;
  else if (s == "user") v = Role::User;
  else if (s == "assistant") v = Role::Assistant;
  else throw json::other_error::create(501, "invalid role", &j);
}

void to_json(json& j, const GoalOrigin& v) {
  if (const auto* inferred = std::get_if<InferredOrigin>(&v)) {
    j = {{"kind", "inferred"}, {"turn", inferred->turn}, {"message", inferred->message}};
    put_optional(j, "span", inferred->span);
  } else if (std::holds_alternative<UserCreatedOrigin>(v)) {
    j = {{"kind", "user_created"}};
  } else {
    j = {{"kind", "preloaded"}};
  }
}
void from_json(const json& j, GoalOrigin& v) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "inferred") {
    InferredOrigin o;
    o.turn = j.at("turn").get<int>();
    o.message = j.at("message").get<MessageId>();
    get_optional(j, "span", o.span);
    v = o;
  } else if (kind == "user_created") {
    v = UserCreatedOrigin{};
  } else if (kind == "preloaded") {
    v = PreloadedOrigin{};
  } else {
    throw json::other_error::create(501, "invalid origin", &j);
  }
}

void to_json(json& j, const Goal& v) {
  j = {{"id", v.id},          {"text", v.text},           {"type", v.type},
       {"origin", v.origin},  {"locked", v.locked},       {"completed", v.completed},
       {"parents", v.parents}, {"created_turn", v.created_turn}, {"active", v.active()}};
  put_optional(j, "superseded_by", v.superseded_by);
}
void from_json(const json& j, Goal& v) {
  v.id = j.at("id").get<GoalId>();
  v.text = j.at("text").get<std::string>();
  v.type = j.at("type").get<GoalType>();
  v.origin = j.at("origin").get<GoalOrigin>();
  v.locked = j.at("locked").get<bool>();
  v.completed = j.at("completed").get<bool>();
  v.parents = j.value("parents", std::vector<GoalId>{});
  v.created_turn = j.at("created_turn").get<int>();
  get_optional(j, "superseded_by", v.superseded_by);
}

void to_json(json& j, const PoolRef& v) {
  j = {{"pool", v.pool == Pool::Existing ? "existing" : "inferred"}, {"index", v.index}};
}
void from_json(const json& j, PoolRef& v) {
  const auto pool = j.at("pool").get<std::string>();
  if (pool == "existing") v.pool = Pool::Existing;
  else if (pool == "inferred") v.pool = Pool::Inferred;
  else throw json::other_error::create(501, "invalid pool", &j);
  v.index = j.at("index").get<std::size_t>();
}

void to_json(json& j, const MergeOperation& v) {
  j = {{"op", v.kind}, {"updated_text", v.updated_text}, {"consumed", v.consumed}};
}
void from_json(const json& j, MergeOperation& v) {
  v.kind = j.at("op").get<OpKind>();
  v.updated_text = j.at("updated_text").get<std::string>();
  v.consumed = j.at("consumed").get<std::vector<PoolRef>>();
}

void to_json(json& j, const EvidenceExample& v) {
  j = {{"text", v.text}, {"grounded", v.grounded}};
  put_optional(j, "span", v.span);
}
void from_json(const json& j, EvidenceExample& v) {
  v.text = j.at("text").get<std::string>();
  v.grounded = j.at("grounded").get<bool>();
  get_optional(j, "span", v.span);
}

void to_json(json& j, const Evaluation& v) {
  j = {{"goal", v.goal},           {"message", v.message},         {"turn", v.turn},
       {"category", v.category},   {"explanation", v.explanation}, {"examples", v.examples}};
}
void from_json(const json& j, Evaluation& v) {
  v.goal = j.at("goal").get<GoalId>();
  v.message = j.at("message").get<MessageId>();
  v.turn = j.at("turn").get<int>();
  v.category = j.at("category").get<EvaluationCategory>();
  v.explanation = j.at("explanation").get<std::string>();
  v.examples = j.at("examples").get<std::vector<EvidenceExample>>();
}

void to_json(json& j, const PipelineEvent& v) {
  j = {{"turn", v.turn}, {"stage", v.stage}, {"kind", v.kind}, {"goals", v.goals}};
  put_optional(j, "message", v.message);
  if (!v.detail.empty()) j["detail"] = v.detail;
}
void from_json(const json& j, PipelineEvent& v) {
  v.turn = j.at("turn").get<int>();
  v.stage = j.at("stage").get<Stage>();
  v.kind = j.at("kind").get<EventKind>();
  v.goals = j.at("goals").get<std::vector<GoalId>>();
  get_optional(j, "message", v.message);
  v.detail = j.value("detail", std::string());
}

void to_json(json& j, const GoalLedger& v) {
  j = {{"goals", v.goals()}, {"evaluations", v.evaluations()}};
}

void to_json(json& j, const PipelineConfig& v) {
  j = {{"infer", v.infer_enabled},
       {"merge", v.merge_enabled},
       {"evaluate", v.evaluate_enabled},
       {"evaluation_concurrency_limit", v.evaluation_concurrency_limit}};
}
void from_json(const json& j, PipelineConfig& v) {
  PipelineConfig c;
  c.infer_enabled = j.value("infer", c.infer_enabled);
  c.merge_enabled = j.value("merge", c.merge_enabled);
  c.evaluate_enabled = j.value("evaluate", c.evaluate_enabled);
  c.evaluation_concurrency_limit = j.value("evaluation_concurrency_limit", c.evaluation_concurrency_limit);
  v = c;
}

void to_json(json& j, const InferredClause& v) {
  j = {{"clause", v.clause}, {"type", v.type}, {"summary", v.summary}, {"grounded", v.grounded}};
  put_optional(j, "span", v.span);
}
void from_json(const json& j, InferredClause& v) {
  v.clause = j.at("clause").get<std::string>();
  v.type = j.at("type").get<GoalType>();
  v.summary = j.at("summary").get<std::string>();
  v.grounded = j.at("grounded").get<bool>();
  get_optional(j, "span", v.span);
}

void to_json(json& j, const Message& v) {
  j = {{"id", v.id}, {"role", v.role}, {"turn", v.turn}, {"text", v.text}};
}
void from_json(const json& j, Message& v) {
  v.id = j.at("id").get<MessageId>();
  v.role = j.at("role").get<Role>();
  v.turn = j.at("turn").get<int>();
  v.text = j.at("text").get<std::string>();
}

void to_json(json& j, const TurnRecord& v) {
  j = {{"turn", v.turn},
       {"user_message", v.user_message},
       {"response", v.response},
       {"user_text", v.user_text},
       {"response_text", v.response_text},
       {"config", v.config},
       {"inferred", v.inferred},
       {"merge_ops", v.merge_ops},
       {"evaluations", v.evaluations},
       {"events", v.events}};
}
void from_json(const json& j, TurnRecord& v) {
  v.turn = j.at("turn").get<int>();
  v.user_message = j.at("user_message").get<MessageId>();
  v.response = j.at("response").get<MessageId>();
  v.user_text = j.at("user_text").get<std::string>();
  v.response_text = j.at("response_text").get<std::string>();
  v.config = j.at("config").get<PipelineConfig>();
  v.inferred = j.at("inferred").get<std::vector<InferredClause>>();
  v.merge_ops = j.at("merge_ops").get<std::vector<MergeOperation>>();
  v.evaluations = j.at("evaluations").get<std::vector<Evaluation>>();
  v.events = j.at("events").get<std::vector<PipelineEvent>>();
}

void to_json(json& j, const ConversationState& v) {
  j = {{"config", v.config},
       {"ledger", v.ledger},
       {"messages", v.messages},
       {"turns", v.turns},
       {"control_events", v.control_events}};
}

void to_json(json& j, const Sentence& v) {
  j = {{"message", v.message}, {"index", v.index}, {"range", v.range}, {"text", v.text}};
}

void to_json(json& j, const KeyPhrase& v) {
  j = {{"message", v.message}, {"text", v.text}, {"grounded", v.grounded}, {"shared", v.shared}};
  put_optional(j, "span", v.span);
}

void to_json(json& j, const HighlightSpan& v) {
  j = {{"message", v.message}, {"range", v.range}, {"kind", highlight_kind_name(v.kind)}};
  if (const auto* e = std::get_if<EvalExampleMark>(&v.kind)) {
    j["category"] = e->category;
    j["goal"] = e->goal;
  } else if (const auto* k = std::get_if<KeyPhraseMark>(&v.kind)) {
    j["shared"] = k->shared;
  } else if (const auto* p = std::get_if<SimilarPairMark>(&v.kind)) {
    j["pair_id"] = p->pair_id;
    j["score"] = p->score;
  } else if (const auto* u = std::get_if<UniqueSentenceMark>(&v.kind)) {
    j["mean_similarity"] = u->mean_similarity;
  }
}

}  // namespace goaltrack
