#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "goaltrack/pipeline.hpp"

namespace goaltrack {

struct PreloadedGoal {
  std::string text;
  GoalType type = GoalType::Request;
  bool locked = false;

  bool operator==(const PreloadedGoal&) const = default;
};

struct SessionConfig {
  PipelineConfig pipeline;
  std::string backend = "mock";  // name of the chat backend configuration
  std::vector<PreloadedGoal> preloaded_goals;

  void validate() const;
  static SessionConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  bool operator==(const SessionConfig&) const = default;
};

enum class ControlKind { Create, Lock, Unlock, Complete, Restore, Toggle };

struct ControlAction {
  ControlKind kind = ControlKind::Lock;
  std::optional<GoalId> goal;            // lock/unlock/complete/restore
  std::string text;                      // create
  GoalType type = GoalType::Request;     // create
  bool locked = false;                   // create
  std::optional<PipelineConfig> pipeline;  // toggle

  bool operator==(const ControlAction&) const = default;
};

nlohmann::json control_to_json(const ControlAction& action);
// Throws InvalidRequest for an unknown action name.
ControlAction control_from_json(const nlohmann::json& j);

struct SessionCreated {
  SessionConfig config;
  bool operator==(const SessionCreated&) const = default;
};

using EventPayload = std::variant<SessionCreated, TurnRecord, ControlAction>;

struct StoredEvent {
  std::uint64_t seq = 0;
  std::string session;
  std::int64_t timestamp_ms = 0;  // informational; never read by the fold
  EventPayload payload;

  bool operator==(const StoredEvent&) const = default;
};

nlohmann::json to_json(const StoredEvent& event);
StoredEvent stored_event_from_json(const nlohmann::json& j);

// Folds one event into a state. Throws (state unchanged) if the event does
// not apply, e.g. locking an inactive goal.
void fold_event(ConversationState& state, const EventPayload& payload);
ConversationState fold(const std::vector<StoredEvent>& events);

// Append-only storage for one session's events.
class EventLog {
 public:
  virtual ~EventLog() = default;
  // All-or-nothing; throws StorageFailure leaving the log unchanged.
  virtual void append(const std::vector<StoredEvent>& events) = 0;
  virtual std::vector<StoredEvent> read_all() const = 0;
};

class MemoryEventLog final : public EventLog {
 public:
  void append(const std::vector<StoredEvent>& events) override;
  std::vector<StoredEvent> read_all() const override;

 private:
  mutable std::mutex mutex_;
  std::vector<StoredEvent> events_;
};

// One canonical JSON line per event, fsync'ed before append returns.
class FileEventLog final : public EventLog {
 public:
  explicit FileEventLog(std::filesystem::path path);

  void append(const std::vector<StoredEvent>& events) override;
  std::vector<StoredEvent> read_all() const override;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  mutable std::mutex mutex_;
};

inline constexpr int kTranscriptVersion = 1;

// A session: its event log plus the folded live state. Mutations go through
// append_* and are serialized; readers get consistent copies.
class Session {
 public:
  static std::unique_ptr<Session> create(std::string id, const SessionConfig& config,
                                         std::unique_ptr<EventLog> log,
                                         std::int64_t created_ms = 0);
  // Rebuilds from an existing log.
  static std::unique_ptr<Session> open(std::unique_ptr<EventLog> log);
  // Rebuilds from a transcript into an empty log. Throws MalformedTranscript
  // naming the offending line.
  static std::unique_ptr<Session> import_transcript(std::istream& in, std::unique_ptr<EventLog> log);

  const std::string& id() const { return id_; }
  std::int64_t created_ms() const { return created_ms_; }
  const SessionConfig& config() const { return config_; }

  std::uint64_t append_turn(const TurnRecord& record);
  std::uint64_t append_control(const ControlAction& action);
  std::uint64_t last_seq() const;

  ConversationState state() const;
  ConversationState snapshot_at(int turn) const;
  std::vector<StoredEvent> events() const;

  std::string export_transcript() const;

  // At most one turn runs at a time; waiting senders queue on this mutex.
  std::mutex& turn_mutex() { return turn_mutex_; }
  std::atomic<bool>& turn_in_flight() { return turn_in_flight_; }

 private:
  Session() = default;
  std::uint64_t append(EventPayload payload);

  std::string id_;
  std::int64_t created_ms_ = 0;
  SessionConfig config_;
  std::unique_ptr<EventLog> log_;
  mutable std::shared_mutex state_mutex_;
  std::vector<StoredEvent> events_;
  ConversationState state_;
  std::mutex turn_mutex_;
  std::atomic<bool> turn_in_flight_{false};
};

// Sessions under one data directory, one "<id>.jsonl" log each. An empty
// data directory keeps everything in memory.
class SessionStore {
 public:
  explicit SessionStore(std::filesystem::path data_dir = {});

  std::shared_ptr<Session> create_session(const SessionConfig& config,
                                          std::optional<std::string> id = std::nullopt);
  std::shared_ptr<Session> import_session(std::istream& transcript);
  std::shared_ptr<Session> find(const std::string& id);
  std::shared_ptr<Session> get(const std::string& id);  // throws UnknownSession
  std::vector<std::string> ids() const;

 private:
  std::unique_ptr<EventLog> make_log(const std::string& id) const;
  std::string next_id();

  std::filesystem::path data_dir_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t counter_ = 0;
};

}  // namespace goaltrack
