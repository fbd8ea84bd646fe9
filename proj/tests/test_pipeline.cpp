#include <gtest/gtest.h>

#include "goaltrack/grounding.hpp"
#include "goaltrack/pipeline.hpp"
#include "goaltrack/serialization.hpp"
#include "support.hpp"

using namespace goaltrack;
using namespace testing_support;
using nlohmann::json;

namespace {

const PromptCatalog& prompts() {
  static const PromptCatalog catalog = PromptCatalog::builtin();
  return catalog;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::InvalidRequest;
}

std::string clauses(const json& list) { return json({{"clauses", list}}).dump(); }

Goal goal(int id, std::string text) {
  Goal g;
  g.id = GoalId{id};
  g.text = std::move(text);
  return g;
}

ConversationState state_with(std::vector<PreloadedGoal> goals, PipelineConfig config = {}) {
  ConversationState state;
  state.config = config;
  for (const auto& g : goals) {
    const GoalId id = state.ledger.create_goal(g.text, g.type, PreloadedOrigin{}, 0).id;
    if (g.locked) state.ledger.lock_goal(id);
  }
  return state;
}

}  // namespace

// ---------------------------------------------------------------------------
// infer

TEST(Infer, RequestClause) {
  const auto mock = mock_from(
      {{"infer:1", clauses({{{"clause", "I want to write a story"}, {"type", "request"}, {"summary", "Write a story"}}})}});
  const auto result = infer_goals("I want to write a story", mock, prompts(), 1);
  ASSERT_EQ(result.clauses.size(), 1u);
  const auto& c = result.clauses[0];
  EXPECT_EQ(c.type, GoalType::Request);
  EXPECT_TRUE(c.grounded);
  EXPECT_EQ(c.span, (CharRange{0, 23}));
  EXPECT_EQ(c.goal_text(), "Write a story");
  EXPECT_TRUE(result.warnings.empty());
}

TEST(Infer, QuestionClause) {
  const std::string msg = "Why did you include a dog in the story?";
  const auto mock = mock_from({{"infer:1", clauses({{{"clause", msg}, {"type", "question"}, {"summary", "Why a dog"}}})}});
  const auto result = infer_goals(msg, mock, prompts(), 1);
  ASSERT_EQ(result.clauses.size(), 1u);
  EXPECT_EQ(result.clauses[0].type, GoalType::Question);
  EXPECT_EQ(result.clauses[0].span, (CharRange{0, msg.size() - 1}));  // trailing '?' trimmed
}

TEST(Infer, EmptyMessageRejected) {
  const auto mock = mock_from({{"infer:1", clauses(json::array())}});
  EXPECT_EQ(code_of([&] { infer_goals("", mock, prompts(), 1); }), ErrorCode::PreconditionViolation);
}

TEST(Infer, UngroundedKeptUnknownTypeDropped) {
  const auto mock = mock_from({{"infer:1", clauses({{{"clause", "not in the message"}, {"type", "offer"}, {"summary", "s"}},
                                                   {{"clause", "write a poem"}, {"type", "demand"}, {"summary", "s"}}})}});
  const auto result = infer_goals("Please write a poem", mock, prompts(), 1);
  ASSERT_EQ(result.clauses.size(), 1u);
  EXPECT_FALSE(result.clauses[0].grounded);
  EXPECT_FALSE(result.clauses[0].span);
  ASSERT_EQ(result.warnings.size(), 1u);
  EXPECT_NE(result.warnings[0].detail.find("UnknownGoalType"), std::string::npos);
}

TEST(Infer, SendsPromptAsSystemMessage) {
  struct Spy final : Backend {
    void stream_chat(const std::vector<ChatMessage>& m, const CallContext&, const ChunkSink& sink) const override {
      seen = m;
      sink(R"({"clauses": []})", false);
      sink("", true);
    }
    std::vector<std::vector<double>> embed_raw(const std::vector<std::string>&) const override { return {}; }
    mutable std::vector<ChatMessage> seen;
  } spy;
  infer_goals("hello there", spy, prompts(), 1);
  ASSERT_EQ(spy.seen.size(), 2u);
  EXPECT_EQ(spy.seen[0].role, Role::System);
  EXPECT_EQ(spy.seen[0].content, prompts().render(PromptStage::Infer));
  EXPECT_EQ(spy.seen[1].content, "hello there");
}

TEST(Infer, MalformedReply) {
  const auto mock = mock_from({{"infer:1", R"({"goals": []})"}});
  EXPECT_EQ(code_of([&] { infer_goals("hi", mock, prompts(), 1); }), ErrorCode::MalformedOutput);
}

// ---------------------------------------------------------------------------
// merge

TEST(Merge, NumberedList) {
  EXPECT_EQ(numbered_list({"a", "b"}), "1. a\n2. b");
  EXPECT_EQ(numbered_list({}), "");
}

TEST(Merge, EmptyExistingPoolSkipsCall) {
  const auto mock = mock_from(json::object());  // any call would be MissingScript
  const InferredGoal n1{"new", GoalType::Request, {}};
  const auto plan = merge_goals({}, {n1}, mock, prompts(), 1);
  ASSERT_EQ(plan.ops.size(), 1u);
  EXPECT_EQ(plan.ops[0], (MergeOperation{OpKind::Keep, {}, {{Pool::Inferred, 1}}}));
}

TEST(Merge, CombineFromMock) {
  const auto mock = mock_from({{"merge:2", json({{"operations",
                                                  {{{"updated_goal", "make the story longer and happier"},
                                                    {"operation", "combine"},
                                                    {"goal_numbers", {"1", "1"}}}}}})
                                               .dump()}});
  const InferredGoal n1{"story should be longer and happier", GoalType::Suggestion, {2, MessageId::user(2), {}}};
  const auto plan = merge_goals({goal(1, "story should be longer")}, {n1}, mock, prompts(), 2);
  ASSERT_EQ(plan.ops.size(), 1u);
  EXPECT_EQ(plan.ops[0].kind, OpKind::Combine);
  EXPECT_EQ(plan.ops[0].updated_text, "make the story longer and happier");

  // hand-checked application
  GoalLedger ledger;
  const GoalId g1 = ledger.create_goal("story should be longer", GoalType::Request, PreloadedOrigin{}, 0).id;
  const auto result = ledger.apply_merge({g1}, {n1}, plan.ops, 2);
  ASSERT_EQ(result.created.size(), 1u);
  const Goal& made = ledger.goal(result.created[0]);
  EXPECT_EQ(made.id, GoalId{2});
  EXPECT_EQ(made.text, "make the story longer and happier");
  EXPECT_EQ(made.type, GoalType::Suggestion);
  EXPECT_EQ(made.parents, std::vector<GoalId>{g1});
  EXPECT_EQ(ledger.goal(g1).superseded_by, GoalId{2});
  EXPECT_EQ(ledger.active_goals().size(), 1u);
}

TEST(Merge, UnknownOperationDroppedAndKeepsSynthesized) {
  const json reply = {{"operations", {{{"updated_goal", "x"}, {"operation", "delete"}, {"goal_numbers", {"1"}}}}}};
  const auto plan = parse_merge_reply(reply, 1, 1, 3);
  ASSERT_EQ(plan.warnings.size(), 1u);
  EXPECT_NE(plan.warnings[0].detail.find("InvalidOperationName"), std::string::npos);
  EXPECT_EQ(plan.warnings[0].stage, Stage::Merge);
  ASSERT_EQ(plan.ops.size(), 2u);
  EXPECT_EQ(plan.ops[0], (MergeOperation{OpKind::Keep, {}, {{Pool::Existing, 1}}}));
  EXPECT_EQ(plan.ops[1], (MergeOperation{OpKind::Keep, {}, {{Pool::Inferred, 1}}}));
}

TEST(Merge, BareKeepNumbersResolveOldPoolFirst) {
  const json reply = {{"operations",
                       {{{"operation", "keep"}, {"goal_numbers", {"1"}}},
                        {{"operation", "replace"}, {"updated_goal", "r"}, {"goal_numbers", {"2", "2"}}},
                        {{"operation", "keep"}, {"goal_numbers", {"1"}}}}}};
  const auto plan = parse_merge_reply(reply, 2, 2, 2);
  EXPECT_TRUE(plan.warnings.empty());
  ASSERT_EQ(plan.ops.size(), 3u);
  EXPECT_EQ(plan.ops[0].consumed, (std::vector<PoolRef>{{Pool::Existing, 1}}));
  EXPECT_EQ(plan.ops[1].consumed, (std::vector<PoolRef>{{Pool::Existing, 2}, {Pool::Inferred, 2}}));
  EXPECT_EQ(plan.ops[2].consumed, (std::vector<PoolRef>{{Pool::Inferred, 1}}));
}

TEST(Merge, ExplicitPoolPrefixesAndOrder) {
  const json reply = {{"operations",
                       {{{"operation", "combine"}, {"updated_goal", "c"}, {"goal_numbers", {"new 1", "old 2"}}},
                        {{"operation", "keep"}, {"goal_numbers", {"new 2"}}}}}};
  const auto plan = parse_merge_reply(reply, 2, 2, 2);
  ASSERT_EQ(plan.ops.size(), 3u);
  EXPECT_EQ(plan.ops[0].consumed, (std::vector<PoolRef>{{Pool::Existing, 2}, {Pool::Inferred, 1}}));
  EXPECT_EQ(plan.ops[1].consumed, (std::vector<PoolRef>{{Pool::Inferred, 2}}));
  EXPECT_EQ(plan.ops[2].consumed, (std::vector<PoolRef>{{Pool::Existing, 1}}));  // synthesized
}

TEST(Merge, InvalidOperationsBecomeWarnings) {
  const json reply = {{"operations",
                       {{{"operation", "combine"}, {"goal_numbers", {"1"}}},
                        {{"operation", "replace"}, {"goal_numbers", {"9", "1"}}},
                        {{"operation", "keep"}, {"goal_numbers", {"x"}}},
                        {{"operation", "combine"}, {"goal_numbers", {"1", "1"}}},
                        {{"operation", "replace"}, {"goal_numbers", {"1", "1"}}},
                        "junk"}}};
  const auto plan = parse_merge_reply(reply, 1, 1, 2);
  EXPECT_EQ(plan.warnings.size(), 5u);
  ASSERT_EQ(plan.ops.size(), 1u);
  EXPECT_EQ(plan.ops[0].kind, OpKind::Combine);
  EXPECT_EQ(code_of([] { parse_merge_reply(json::array(), 1, 1, 1); }), ErrorCode::MalformedOutput);
}

TEST(Merge, LockedGoalsRejectedFromPool) {
  Goal g = goal(1, "x");
  g.locked = true;
  const auto mock = mock_from(json::object());
  EXPECT_EQ(code_of([&] { merge_goals({g}, {}, mock, prompts(), 1); }), ErrorCode::PreconditionViolation);
}

// ---------------------------------------------------------------------------
// evaluate

namespace {
const std::string kResponse = "Furthermore, the data indicates a steady rise. Prices doubled.";
}

TEST(Evaluate, GroundedExample) {
  const auto mock = mock_from({{"evaluate:1:1", json({{"category", "confirm"},
                                                      {"explanation", "Formal register throughout."},
                                                      {"examples", {"Furthermore, the data indicates"}}})
                                                     .dump()}});
  const auto r = evaluate_goal(goal(1, "use formal language"), "write formally", kResponse,
                               MessageId::assistant(1), 1, 1, mock, prompts());
  EXPECT_EQ(r.evaluation.category, EvaluationCategory::Confirm);
  EXPECT_EQ(r.evaluation.goal, GoalId{1});
  ASSERT_EQ(r.evaluation.examples.size(), 1u);
  EXPECT_TRUE(r.evaluation.examples[0].grounded);
  EXPECT_EQ(r.evaluation.examples[0].span, (CharRange{0, 31}));
  EXPECT_FALSE(r.warning);
}

TEST(Evaluate, UngroundedExampleFlagged) {
  const auto mock = mock_from({{"evaluate:1:1", json({{"category", "contradict"},
                                                      {"explanation", "e"},
                                                      {"examples", {"lol whatever"}}})
                                                     .dump()}});
  const auto r = evaluate_goal(goal(1, "use formal language"), "u", kResponse, MessageId::assistant(1), 1, 1,
                               mock, prompts());
  ASSERT_EQ(r.evaluation.examples.size(), 1u);
  EXPECT_FALSE(r.evaluation.examples[0].grounded);
  EXPECT_FALSE(r.evaluation.examples[0].span);
}

TEST(Evaluate, UnknownCategoryFallsBackToIgnore) {
  const auto mock = mock_from({{"evaluate:1:1", json({{"category", "maybe"}, {"explanation", "e"}, {"examples", json::array()}}).dump()}});
  const auto r = evaluate_goal(goal(1, "g"), "u", kResponse, MessageId::assistant(1), 1, 1, mock, prompts());
  EXPECT_EQ(r.evaluation.category, EvaluationCategory::Ignore);
  ASSERT_TRUE(r.warning);
  EXPECT_EQ(r.warning->kind, EventKind::Warning);
  EXPECT_EQ(r.warning->stage, Stage::Evaluate);
}

TEST(Evaluate, Preconditions) {
  const auto mock = mock_from(json::object());
  Goal done = goal(1, "g");
  done.completed = true;
  EXPECT_EQ(code_of([&] { evaluate_goal(done, "u", kResponse, MessageId::assistant(1), 1, 1, mock, prompts()); }),
            ErrorCode::PreconditionViolation);
  EXPECT_EQ(code_of([&] { evaluate_goal(goal(1, "g"), "u", " ", MessageId::assistant(1), 1, 1, mock, prompts()); }),
            ErrorCode::PreconditionViolation);
}

// ---------------------------------------------------------------------------
// grounding

TEST(Grounding, Examples) {
  EXPECT_EQ(ground_span("The  Quick fox.", "the quick"), (CharRange{0, 10}));
  EXPECT_FALSE(ground_span("The  Quick fox.", "absent text"));
  EXPECT_EQ(ground_span("The  Quick fox.", "The  Quick fox."), (CharRange{0, 14}));
  EXPECT_EQ(ground_span("a b a b", "A B"), (CharRange{0, 3}));  // first match
  EXPECT_EQ(ground_span("say\n\thello   world now", "hello world"), (CharRange{5, 18}));
  EXPECT_FALSE(ground_span("abc", "..."));
  EXPECT_THROW(ground_span("abc", ""), Error);
}

TEST(Grounding, RandomizedSoundness) {
  const auto outcome = check_property<GroundingCase>(500, 20261019, generate_grounding_case,
                                                     shrink_grounding_case, check_grounding_case);
  EXPECT_TRUE(outcome.passed) << outcome.message;
  EXPECT_EQ(outcome.cases, 500);
}

// ---------------------------------------------------------------------------
// run_turn

TEST(RunTurn, StudyTurnCoverage) {
  const auto mock = study_mock();
  auto session = Session::create("s", study_config(), std::make_unique<MemoryEventLog>());
  const auto messages = study_messages();
  for (int t = 1; t <= 4; ++t) {
    const auto before = session->state();
    const auto record = run_turn(before, messages[t - 1], {mock, mock}, prompts());
    EXPECT_EQ(record.turn, t);
    session->append_turn(record);
    const auto after = session->state();
    EXPECT_EQ(record.evaluations.size(), after.ledger.active_goals().size()) << "turn " << t;
    for (const auto& g : after.ledger.goals()) {
      if (g.locked) EXPECT_FALSE(g.superseded_by) << g.id.str();
    }
    // stage order
    int last = 0;
    for (const auto& e : record.events) {
      const int rank = static_cast<int>(e.stage);
      EXPECT_GE(rank, last);
      last = rank;
    }
    if (t == 2) {
      ControlAction complete;
      complete.kind = ControlKind::Complete;
      complete.goal = GoalId{7};
      session->append_control(complete);
    }
  }
  const auto final = session->state();
  EXPECT_EQ(final.ledger.goal(GoalId{8}).superseded_by, GoalId{9});
  EXPECT_TRUE(final.ledger.goal(GoalId{7}).completed);
}

TEST(RunTurn, InferOnlyAdmitsGoals) {
  PipelineConfig config;
  config.merge_enabled = false;
  config.evaluate_enabled = false;
  auto state = state_with({{"Use formal and technical language", GoalType::Request, true}}, config);
  const auto mock = mock_from({{"infer:1", clauses({{{"clause", "write a poem"}, {"type", "request"}, {"summary", "Write a poem"}}})},
                               {"chat:1", "Roses are red."}});
  const auto record = run_turn(state, "Please write a poem", {mock, mock}, prompts());
  EXPECT_TRUE(record.merge_ops.empty());
  EXPECT_TRUE(record.evaluations.empty());
  ASSERT_EQ(record.inferred.size(), 1u);
  apply_turn(state, record);
  ASSERT_EQ(state.ledger.active_goals().size(), 2u);
  EXPECT_EQ(state.ledger.active_goals()[1].text, "Write a poem");
  const auto admitted = std::find_if(record.events.begin(), record.events.end(),
                                     [](const auto& e) { return e.kind == EventKind::GoalInferred; });
  ASSERT_NE(admitted, record.events.end());
  EXPECT_EQ(admitted->goals, std::vector<GoalId>{GoalId{2}});
  const auto skipped = std::count_if(record.events.begin(), record.events.end(),
                                     [](const auto& e) { return e.kind == EventKind::StageSkipped; });
  EXPECT_EQ(skipped, 2);
}

TEST(RunTurn, AllDisabledStillChats) {
  PipelineConfig config{false, false, false, 1};
  ConversationState state;
  state.config = config;
  const auto mock = mock_from({{"chat:1", "Hi!"}});
  const auto record = run_turn(state, "hello", {mock, mock}, prompts());
  EXPECT_EQ(record.response_text, "Hi!");
  EXPECT_EQ(record.events.size(), 3u);
}

TEST(RunTurn, MergeWithoutInferRejected) {
  ConversationState state;
  state.config.infer_enabled = false;
  const auto mock = mock_from(json::object());
  EXPECT_EQ(code_of([&] { run_turn(state, "hello", {mock, mock}, prompts()); }), ErrorCode::InvalidConfig);
  EXPECT_EQ(code_of([&] { run_turn(ConversationState{}, "   ", {mock, mock}, prompts()); }),
            ErrorCode::PreconditionViolation);
}

TEST(RunTurn, ChatReceivesHistoryWithoutGoals) {
  struct Spy final : Backend {
    void stream_chat(const std::vector<ChatMessage>& m, const CallContext& c, const ChunkSink& sink) const override {
      seen.push_back(m);
      sink("reply " + std::to_string(c.turn), false);
      sink("", true);
    }
    std::vector<std::vector<double>> embed_raw(const std::vector<std::string>&) const override { return {}; }
    mutable std::vector<std::vector<ChatMessage>> seen;
  } chat;
  ConversationState state = state_with({{"secret goal text", GoalType::Request, true}}, {false, false, false, 1});
  apply_turn(state, run_turn(state, "one", {chat, chat}, prompts()));
  apply_turn(state, run_turn(state, "two", {chat, chat}, prompts()));
  ASSERT_EQ(chat.seen.size(), 2u);
  const auto& second = chat.seen[1];
  ASSERT_EQ(second.size(), 3u);
  EXPECT_EQ(second[0].content, "one");
  EXPECT_EQ(second[1].role, Role::Assistant);
  EXPECT_EQ(second[1].content, "reply 1");
  EXPECT_EQ(second[2].content, "two");
}

TEST(RunTurn, DeterministicAcrossReplays) {
  const auto mock = study_mock();
  auto run = [&] {
    auto session = Session::create("s", study_config(), std::make_unique<MemoryEventLog>());
    run_study(*session, mock, 2);
    std::string out;
    for (const auto& t : session->state().turns) out += json(t).dump() + "\n";
    return out;
  };
  const auto first = run();
  EXPECT_FALSE(first.empty());
  EXPECT_EQ(first, run());
}

TEST(RunTurn, ConcurrencyLimitDoesNotChangeResult) {
  const auto mock = study_mock();
  auto config = study_config();
  auto run = [&](int limit) {
    config.pipeline.evaluation_concurrency_limit = limit;
    auto session = Session::create("s", config, std::make_unique<MemoryEventLog>());
    session->append_turn(run_turn(session->state(), study_messages()[0], {mock, mock}, prompts()));
    json record = session->state().turns.back();
    record.erase("config");  // carries the limit itself
    return record.dump();
  };
  EXPECT_EQ(run(1), run(8));
}

TEST(RunTurn, ObserverSeesChunksThenOrderedEvents) {
  const auto mock = study_mock();
  auto session = Session::create("s", study_config(), std::make_unique<MemoryEventLog>());
  std::string streamed;
  std::vector<PipelineEvent> seen;
  bool chunk_after_event = false;
  TurnObserver observer{[&](std::string_view c) {
                          streamed += c;
                          if (!seen.empty()) chunk_after_event = true;
                        },
                        [&](const PipelineEvent& e) { seen.push_back(e); }};
  const auto record = run_turn(session->state(), study_messages()[0], {mock, mock}, prompts(), observer);
  EXPECT_EQ(streamed, record.response_text);
  EXPECT_FALSE(chunk_after_event);
  EXPECT_EQ(seen, record.events);
}

TEST(RunTurn, FailuresBeforeEvaluateAreAtomic) {
  const auto mock = study_mock();
  auto session = Session::create("s", study_config(), std::make_unique<MemoryEventLog>());
  run_study(*session, mock, 1);
  const auto before = session->state();
  const auto seq = session->last_seq();
  for (const std::string key : {"infer:2", "merge:2", "chat:2"}) {
    FailingBackend failing(mock, {key});
    EXPECT_EQ(code_of([&] { run_turn(session->state(), study_messages()[1], {failing, failing}, prompts()); }),
              ErrorCode::ProviderUnreachable)
        << key;
    EXPECT_EQ(session->state(), before) << key;
    EXPECT_EQ(session->last_seq(), seq);
  }
  // Malformed merge output aborts the same way.
  auto script = load_json("study_mock.json");
  script["merge:2"] = {"nope", "nope", "nope"};
  const auto bad = mock_from(script);
  EXPECT_EQ(code_of([&] { run_turn(session->state(), study_messages()[1], {bad, bad}, prompts()); }),
            ErrorCode::MalformedOutput);
  EXPECT_EQ(session->state(), before);
}

TEST(RunTurn, EvaluateFailureIsPerGoalWarning) {
  const auto mock = study_mock();
  auto session = Session::create("s", study_config(), std::make_unique<MemoryEventLog>());
  run_study(*session, mock, 1);
  FailingBackend failing(mock, {"evaluate:2:3"}, ErrorCode::Timeout);
  const auto record = run_turn(session->state(), study_messages()[1], {failing, failing}, prompts());
  const auto clean = run_turn(session->state(), study_messages()[1], {mock, mock}, prompts());
  EXPECT_EQ(record.evaluations.size() + 1, clean.evaluations.size());
  const auto warnings = std::count_if(record.events.begin(), record.events.end(), [](const auto& e) {
    return e.stage == Stage::Evaluate && e.kind == EventKind::Warning;
  });
  EXPECT_EQ(warnings, 1);
  EXPECT_EQ(record.merge_ops, clean.merge_ops);
}

TEST(ApplyTurn, RejectsOutOfOrderRecord) {
  ConversationState state;
  TurnRecord record;
  record.turn = 2;
  EXPECT_EQ(code_of([&] { apply_turn(state, record); }), ErrorCode::TurnOutOfRange);
}

TEST(PipelineConfig, Validation) {
  EXPECT_NO_THROW((PipelineConfig{}).validate());
  EXPECT_NO_THROW((PipelineConfig{true, false, true, 1}).validate());
  EXPECT_THROW((PipelineConfig{false, true, true, 1}).validate(), Error);
  EXPECT_THROW((PipelineConfig{true, true, true, 0}).validate(), Error);
}
