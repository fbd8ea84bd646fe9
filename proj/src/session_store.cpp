#include "goaltrack/session_store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <fstream>
#include <sstream>

#include "goaltrack/serialization.hpp"

namespace goaltrack {

using nlohmann::json;

namespace {

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::string_view control_name(ControlKind kind) {
  switch (kind) {
    case ControlKind::Create: return "create";
    case ControlKind::Lock: return "lock";
    case ControlKind::Unlock: return "unlock";
    case ControlKind::Complete: return "complete";
    case ControlKind::Restore: return "restore";
    case ControlKind::Toggle: return "toggle";
  }
  return "";
}

ControlKind parse_control(const std::string& name) {
  for (auto kind : {ControlKind::Create, ControlKind::Lock, ControlKind::Unlock,
                    ControlKind::Complete, ControlKind::Restore, ControlKind::Toggle}) {
    if (control_name(kind) == name) return kind;
  }
  throw Error(ErrorCode::InvalidRequest, "unknown control action '" + name + "'");
}

// TurnRecord without the message texts; transcripts carry those on their
// own lines.
json record_without_texts(const TurnRecord& record) {
  json j = record;
  j.erase("user_text");
  j.erase("response_text");
  return j;
}

}  // namespace

json control_to_json(const ControlAction& a) {
  json j = {{"action", control_name(a.kind)}};
  if (a.goal) j["goal"] = *a.goal;
  if (a.kind == ControlKind::Create) {
    j["text"] = a.text;
    j["type"] = a.type;
    j["locked"] = a.locked;
  }
  if (a.pipeline) j["pipeline"] = *a.pipeline;
  return j;
}

ControlAction control_from_json(const json& j) {
  ControlAction a;
  a.kind = parse_control(j.at("action").get<std::string>());
  if (j.contains("goal")) a.goal = j.at("goal").get<GoalId>();
  if (a.kind == ControlKind::Create) {
    a.text = j.at("text").get<std::string>();
    a.type = j.at("type").get<GoalType>();
    a.locked = j.at("locked").get<bool>();
  }
  if (j.contains("pipeline")) a.pipeline = j.at("pipeline").get<PipelineConfig>();
  return a;
}

// ---------------------------------------------------------------------------
// SessionConfig

void SessionConfig::validate() const {
  pipeline.validate();
  for (const auto& g : preloaded_goals) {
    if (g.text.find_first_not_of(" \t\r\n") == std::string::npos) {
      throw Error(ErrorCode::InvalidConfig, "preloaded goal text is empty");
    }
  }
}

SessionConfig SessionConfig::from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, "session config must be an object");
  SessionConfig c;
  try {
    if (j.contains("pipeline")) c.pipeline = j.at("pipeline").get<PipelineConfig>();
    c.backend = j.value("backend", c.backend);
    for (const auto& g : j.value("preloaded_goals", json::array())) {
      PreloadedGoal goal;
      goal.text = g.at("text").get<std::string>();
      goal.type = g.value("type", json("request")).get<GoalType>();
      goal.locked = g.value("locked", false);
      c.preloaded_goals.push_back(std::move(goal));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("session config: ") + e.what());
  }
  c.validate();
  return c;
}

json SessionConfig::to_json() const {
  json goals = json::array();
  for (const auto& g : preloaded_goals) {
    goals.push_back({{"text", g.text}, {"type", g.type}, {"locked", g.locked}});
  }
  return {{"pipeline", pipeline}, {"backend", backend}, {"preloaded_goals", goals}};
}

// ---------------------------------------------------------------------------
// events

json to_json(const StoredEvent& event) {
  json j = {{"seq", event.seq}, {"session", event.session}, {"ts", event.timestamp_ms}};
  if (const auto* created = std::get_if<SessionCreated>(&event.payload)) {
    j["kind"] = "session_created";
    j["payload"] = created->config.to_json();
  } else if (const auto* record = std::get_if<TurnRecord>(&event.payload)) {
    j["kind"] = "turn_committed";
    j["payload"] = *record;
  } else {
    j["kind"] = "control";
    j["payload"] = control_to_json(std::get<ControlAction>(event.payload));
  }
  return j;
}

StoredEvent stored_event_from_json(const json& j) {
  StoredEvent event;
  event.seq = j.at("seq").get<std::uint64_t>();
  event.session = j.at("session").get<std::string>();
  event.timestamp_ms = j.value("ts", std::int64_t{0});
  const auto kind = j.at("kind").get<std::string>();
  const json& payload = j.at("payload");
  if (kind == "session_created") {
    event.payload = SessionCreated{SessionConfig::from_json(payload)};
  } else if (kind == "turn_committed") {
    event.payload = payload.get<TurnRecord>();
  } else if (kind == "control") {
    event.payload = control_from_json(payload);
  } else {
    throw Error(ErrorCode::MalformedTranscript, "unknown event kind '" + kind + "'");
  }
  return event;
}

void fold_event(ConversationState& state, const EventPayload& payload) {
  if (const auto* created = std::get_if<SessionCreated>(&payload)) {
    if (!state.ledger.goals().empty() || state.turn() != 0) {
      throw Error(ErrorCode::InvalidConfig, "session_created must be the first event");
    }
    created->config.validate();
    ConversationState next;
    next.config = created->config.pipeline;
    for (const auto& g : created->config.preloaded_goals) {
      const Goal& goal = next.ledger.create_goal(g.text, g.type, PreloadedOrigin{}, 0);
      if (g.locked) next.ledger.lock_goal(goal.id);
    }
    state = std::move(next);
    return;
  }
  if (const auto* record = std::get_if<TurnRecord>(&payload)) {
    apply_turn(state, *record);
    return;
  }

  const auto& action = std::get<ControlAction>(payload);
  GoalLedger ledger = state.ledger;
  PipelineConfig config = state.config;
  PipelineEvent event;
  event.turn = state.turn();
  event.stage = Stage::Control;
  auto target = [&]() -> GoalId {
    if (!action.goal) throw Error(ErrorCode::InvalidRequest, "control action needs a goal id");
    return *action.goal;
  };
  switch (action.kind) {
    case ControlKind::Create: {
      const Goal& goal = ledger.create_goal(action.text, action.type, UserCreatedOrigin{}, state.turn());
      if (action.locked) ledger.lock_goal(goal.id);
      event.kind = EventKind::GoalCreated;
      event.goals = {goal.id};
      break;
    }
    case ControlKind::Lock:
      ledger.lock_goal(target());
      event.kind = EventKind::GoalLocked;
      event.goals = {target()};
      break;
    case ControlKind::Unlock:
      ledger.unlock_goal(target());
      event.kind = EventKind::GoalUnlocked;
      event.goals = {target()};
      break;
    case ControlKind::Complete:
      ledger.complete_goal(target());
      event.kind = EventKind::GoalCompleted;
      event.goals = {target()};
      break;
    case ControlKind::Restore:
      ledger.restore_goal(target());
      event.kind = EventKind::GoalRestored;
      event.goals = {target()};
      break;
    case ControlKind::Toggle:
      if (!action.pipeline) throw Error(ErrorCode::InvalidRequest, "toggle needs a pipeline config");
      action.pipeline->validate();
      config = *action.pipeline;
      event.kind = EventKind::PipelineToggled;
      event.detail = json(config).dump();
      break;
  }
  state.ledger = std::move(ledger);
  state.config = config;
  state.control_events.push_back(std::move(event));
}

ConversationState fold(const std::vector<StoredEvent>& events) {
  ConversationState state;
  for (const auto& e : events) fold_event(state, e.payload);
  return state;
}

// ---------------------------------------------------------------------------
// logs

void MemoryEventLog::append(const std::vector<StoredEvent>& events) {
  std::lock_guard lock(mutex_);
  events_.insert(events_.end(), events.begin(), events.end());
}

std::vector<StoredEvent> MemoryEventLog::read_all() const {
  std::lock_guard lock(mutex_);
  return events_;
}

FileEventLog::FileEventLog(std::filesystem::path path) : path_(std::move(path)) {}

void FileEventLog::append(const std::vector<StoredEvent>& events) {
  std::string buffer;
  for (const auto& e : events) {
    buffer += to_json(e).dump();
    buffer += '\n';
  }
  std::lock_guard lock(mutex_);
  const int fd = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) {
    throw Error(ErrorCode::StorageFailure,
                "cannot open " + path_.string() + ": " + std::strerror(errno));
  }
  const off_t before = ::lseek(fd, 0, SEEK_END);
  std::size_t written = 0;
  bool ok = true;
  while (written < buffer.size()) {
    const ssize_t n = ::write(fd, buffer.data() + written, buffer.size() - written);
    if (n < 0) {
      if (errno == EINTR) continue;
      ok = false;
      break;
    }
    written += static_cast<std::size_t>(n);
  }
  if (ok && ::fsync(fd) != 0) ok = false;
  const int saved = errno;
  if (!ok && before >= 0) {
    if (::ftruncate(fd, before) != 0) {
      // the partial tail is discarded on the next read_all()
    }
  }
  ::close(fd);
  if (!ok) {
    throw Error(ErrorCode::StorageFailure,
                "cannot append to " + path_.string() + ": " + std::strerror(saved));
  }
}

std::vector<StoredEvent> FileEventLog::read_all() const {
  std::lock_guard lock(mutex_);
  std::vector<StoredEvent> out;
  std::ifstream in(path_);
  if (!in) return out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      if (in.peek() == std::char_traits<char>::eof()) break;  // torn final write
      throw Error(ErrorCode::StorageFailure, path_.string() + ": corrupt line " +
                                                 std::to_string(number))
          .with_line(number);
    }
    out.push_back(stored_event_from_json(j));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Session

std::unique_ptr<Session> Session::create(std::string id, const SessionConfig& config,
                                         std::unique_ptr<EventLog> log, std::int64_t created_ms) {
  config.validate();
  std::unique_ptr<Session> session(new Session());
  session->id_ = std::move(id);
  session->created_ms_ = created_ms ? created_ms : now_ms();
  session->config_ = config;
  session->log_ = std::move(log);
  StoredEvent first{1, session->id_, session->created_ms_, SessionCreated{config}};
  ConversationState state;
  fold_event(state, first.payload);
  session->log_->append({first});
  session->events_.push_back(std::move(first));
  session->state_ = std::move(state);
  return session;
}

std::unique_ptr<Session> Session::open(std::unique_ptr<EventLog> log) {
  auto events = log->read_all();
  if (events.empty() || !std::holds_alternative<SessionCreated>(events.front().payload)) {
    throw Error(ErrorCode::StorageFailure, "event log does not start with session_created");
  }
  for (std::size_t i = 0; i < events.size(); ++i) {
    if (events[i].seq != i + 1) {
      throw Error(ErrorCode::StorageFailure, "event log sequence has a gap at " + std::to_string(i + 1));
    }
  }
  std::unique_ptr<Session> session(new Session());
  session->id_ = events.front().session;
  session->created_ms_ = events.front().timestamp_ms;
  session->config_ = std::get<SessionCreated>(events.front().payload).config;
  session->state_ = fold(events);
  session->events_ = std::move(events);
  session->log_ = std::move(log);
  return session;
}

std::uint64_t Session::append(EventPayload payload) {
  std::unique_lock lock(state_mutex_);
  ConversationState next = state_;
  fold_event(next, payload);
  StoredEvent event{events_.size() + 1, id_, now_ms(), std::move(payload)};
  log_->append({event});
  events_.push_back(std::move(event));
  state_ = std::move(next);
  return events_.back().seq;
}

std::uint64_t Session::append_turn(const TurnRecord& record) { return append(record); }
std::uint64_t Session::append_control(const ControlAction& action) { return append(action); }

std::uint64_t Session::last_seq() const {
  std::shared_lock lock(state_mutex_);
  return events_.size();
}

ConversationState Session::state() const {
  std::shared_lock lock(state_mutex_);
  return state_;
}

std::vector<StoredEvent> Session::events() const {
  std::shared_lock lock(state_mutex_);
  return events_;
}

ConversationState Session::snapshot_at(int turn) const {
  std::shared_lock lock(state_mutex_);
  if (turn < 0 || turn > state_.turn()) {
    throw Error(ErrorCode::TurnOutOfRange, "turn " + std::to_string(turn) + " outside [0, " +
                                               std::to_string(state_.turn()) + "]");
  }
  ConversationState state;
  for (const auto& e : events_) {
    if (const auto* record = std::get_if<TurnRecord>(&e.payload); record && record->turn > turn) {
      break;
    }
    fold_event(state, e.payload);
  }
  return state;
}

std::string Session::export_transcript() const {
  std::shared_lock lock(state_mutex_);
  std::string out;
  auto line = [&](const json& j) {
    out += j.dump();
    out += '\n';
  };
  line({{"kind", "header"},
        {"v", kTranscriptVersion},
        {"session", id_},
        {"created", created_ms_},
        {"config", config_.to_json()}});
  int turn = 0;
  for (const auto& e : events_) {
    if (const auto* record = std::get_if<TurnRecord>(&e.payload)) {
      turn = record->turn;
      line({{"kind", "message"}, {"turn", turn}, {"role", "user"}, {"text", record->user_text}});
      line({{"kind", "message"}, {"turn", turn}, {"role", "assistant"}, {"text", record->response_text}});
      line({{"kind", "turn"}, {"turn", turn}, {"event", record_without_texts(*record)}});
    } else if (const auto* action = std::get_if<ControlAction>(&e.payload)) {
      line({{"kind", "control"}, {"turn", turn}, {"event", control_to_json(*action)}});
    }
  }
  return out;
}

std::unique_ptr<Session> Session::import_transcript(std::istream& in, std::unique_ptr<EventLog> log) {
  std::string text;
  std::size_t number = 0;
  std::unique_ptr<Session> session;
  std::optional<std::string> user_text;
  std::optional<std::string> response_text;
  int pending_turn = 0;

  auto fail = [&](const std::string& why) {
    throw Error(ErrorCode::MalformedTranscript,
                "transcript line " + std::to_string(number) + ": " + why)
        .with_line(number);
  };

  while (std::getline(in, text)) {
    ++number;
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) fail("not a JSON object");
    try {
      const auto kind = j.at("kind").get<std::string>();
      if (number == 1) {
        if (kind != "header") fail("first line must be the header");
        if (j.at("v").get<int>() != kTranscriptVersion) fail("unsupported transcript version");
        session = create(j.at("session").get<std::string>(),
                         SessionConfig::from_json(j.at("config")), std::move(log),
                         j.at("created").get<std::int64_t>());
        continue;
      }
      if (!session) fail("missing header");
      const int turn = j.at("turn").get<int>();
      if (kind == "message") {
        const auto role = j.at("role").get<Role>();
        if (turn != session->state().turn() + 1) fail("message for unexpected turn");
        if (role == Role::User && !user_text) {
          user_text = j.at("text").get<std::string>();
          pending_turn = turn;
        } else if (role == Role::Assistant && user_text && !response_text && turn == pending_turn) {
          response_text = j.at("text").get<std::string>();
        } else {
          fail("unexpected message order");
        }
      } else if (kind == "turn") {
        if (!user_text || !response_text || turn != pending_turn) fail("turn without its messages");
        json body = j.at("event");
        body["user_text"] = *user_text;
        body["response_text"] = *response_text;
        TurnRecord record = body.get<TurnRecord>();
        if (record.turn != turn) fail("turn number mismatch");
        session->append_turn(record);
        user_text.reset();
        response_text.reset();
      } else if (kind == "control") {
        if (user_text) fail("control inside a turn");
        if (turn != session->state().turn()) fail("control for unexpected turn");
        session->append_control(control_from_json(j.at("event")));
      } else {
        fail("unknown line kind '" + kind + "'");
      }
    } catch (const json::exception& e) {
      fail(e.what());
    } catch (const Error& e) {
      if (e.code() == ErrorCode::MalformedTranscript || e.code() == ErrorCode::StorageFailure) throw;
      fail(e.what());
    }
  }
  if (!session) {
    number = number ? number : 1;
    fail("empty transcript");
  }
  if (user_text) fail("transcript ends inside a turn");
  return session;
}

// ---------------------------------------------------------------------------
// SessionStore

SessionStore::SessionStore(std::filesystem::path data_dir) : data_dir_(std::move(data_dir)) {
  if (!data_dir_.empty()) std::filesystem::create_directories(data_dir_);
}

std::unique_ptr<EventLog> SessionStore::make_log(const std::string& id) const {
  if (data_dir_.empty()) return std::make_unique<MemoryEventLog>();
  return std::make_unique<FileEventLog>(data_dir_ / (id + ".jsonl"));
}

std::string SessionStore::next_id() {
  for (;;) {
    std::string id = "s" + std::to_string(++counter_);
    if (sessions_.count(id)) continue;
    if (!data_dir_.empty() && std::filesystem::exists(data_dir_ / (id + ".jsonl"))) continue;
    return id;
  }
}

std::shared_ptr<Session> SessionStore::create_session(const SessionConfig& config,
                                                      std::optional<std::string> id) {
  std::lock_guard lock(mutex_);
  std::string session_id = id ? *id : next_id();
  if (sessions_.count(session_id) ||
      (!data_dir_.empty() && std::filesystem::exists(data_dir_ / (session_id + ".jsonl")))) {
    throw Error(ErrorCode::InvalidConfig, "session " + session_id + " already exists");
  }
  std::shared_ptr<Session> session = Session::create(session_id, config, make_log(session_id));
  sessions_[session_id] = session;
  return session;
}

std::shared_ptr<Session> SessionStore::import_session(std::istream& transcript) {
  // Import into memory first so a bad transcript leaves nothing behind.
  auto staged = Session::import_transcript(transcript, std::make_unique<MemoryEventLog>());
  std::lock_guard lock(mutex_);
  const std::string id = staged->id();
  if (sessions_.count(id) ||
      (!data_dir_.empty() && std::filesystem::exists(data_dir_ / (id + ".jsonl")))) {
    throw Error(ErrorCode::InvalidConfig, "session " + id + " already exists");
  }
  auto log = make_log(id);
  log->append(staged->events());
  std::shared_ptr<Session> session = Session::open(std::move(log));
  sessions_[id] = session;
  return session;
}

std::shared_ptr<Session> SessionStore::find(const std::string& id) {
  std::lock_guard lock(mutex_);
  if (auto it = sessions_.find(id); it != sessions_.end()) return it->second;
  if (data_dir_.empty() || id.empty() || id.find('/') != std::string::npos || id.front() == '.') {
    return nullptr;
  }
  const auto path = data_dir_ / (id + ".jsonl");
  if (!std::filesystem::exists(path)) return nullptr;
  std::shared_ptr<Session> session = Session::open(std::make_unique<FileEventLog>(path));
  sessions_[id] = session;
  return session;
}

std::shared_ptr<Session> SessionStore::get(const std::string& id) {
  auto session = find(id);
  if (!session) throw Error(ErrorCode::UnknownSession, "unknown session " + id);
  return session;
}

std::vector<std::string> SessionStore::ids() const {
  std::lock_guard lock(mutex_);
  std::vector<std::string> out;
  for (const auto& [id, _] : sessions_) out.push_back(id);
  return out;
}

}  // namespace goaltrack
