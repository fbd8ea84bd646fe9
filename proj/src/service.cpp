#include "goaltrack/service.hpp"

#include <charconv>
#include <sstream>

#include <httplib.h>

#include "goaltrack/serialization.hpp"
#include "goaltrack/timeline.hpp"

namespace goaltrack {

using nlohmann::json;

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyGoalText:
    case ErrorCode::IndexOutOfRange:
    case ErrorCode::DoubleConsumption:
    case ErrorCode::InvalidOperation:
    case ErrorCode::PreconditionViolation:
    case ErrorCode::UnknownGoalType:
    case ErrorCode::UnknownCategory:
    case ErrorCode::InvalidOperationName:
    case ErrorCode::InvalidConfig:
    case ErrorCode::InsufficientSentences:
    case ErrorCode::TurnOutOfRange:
    case ErrorCode::MalformedTranscript:
    case ErrorCode::InvalidRequest:
    case ErrorCode::NoEvaluations:
      return 400;
    case ErrorCode::UnknownGoal:
    case ErrorCode::UnknownSession:
      return 404;
    case ErrorCode::GoalNotActive:
    case ErrorCode::GoalAlreadyActive:
    case ErrorCode::DuplicateEvaluation:
    case ErrorCode::TurnInFlight:
      return 409;
    case ErrorCode::ProviderUnreachable:
    case ErrorCode::Timeout:
    case ErrorCode::ProviderRefusal:
    case ErrorCode::MalformedOutput:
    case ErrorCode::DimensionMismatch:
    case ErrorCode::MissingScript:
      return 502;
    case ErrorCode::StorageFailure:
      return 500;
  }
  return 500;
}

std::optional<ViewMode> parse_view_mode(std::string_view text) {
  if (text == "eval_examples") return ViewMode::EvalExamples;
  if (text == "key_phrases") return ViewMode::KeyPhrases;
  if (text == "similar") return ViewMode::Similar;
  if (text == "unique") return ViewMode::Unique;
  return std::nullopt;
}

std::string StreamFrame::encode() const {
  std::string_view name;
  switch (kind) {
    case Kind::ChatChunk: name = "chat_chunk"; break;
    case Kind::PipelineEvent: name = "pipeline_event"; break;
    case Kind::TurnComplete: name = "turn_complete"; break;
    case Kind::Error: name = "error"; break;
  }
  return json{{"kind", name}, {"payload", payload}}.dump() + "\n";
}

namespace {

json error_body(const Error& e) {
  json j = {{"error", to_string(e.code())}, {"message", e.what()}, {"status", http_status(e.code())}};
  if (e.line()) j["line"] = e.line();
  return j;
}

GoalId parse_goal(const std::string& text) {
  auto id = GoalId::parse(text);
  if (!id) throw Error(ErrorCode::UnknownGoal, "unknown goal " + text);
  return *id;
}

json session_descriptor(const Session& session) {
  const auto state = session.state();
  return {{"id", session.id()},
          {"created", session.created_ms()},
          {"config", session.config().to_json()},
          {"pipeline", state.config},
          {"turn", state.turn()},
          {"last_seq", session.last_seq()}};
}

// Releases the in-flight flag when a turn ends, however it ends.
struct InFlight {
  explicit InFlight(std::atomic<bool>& flag) : flag_(flag) { flag_ = true; }
  ~InFlight() { flag_ = false; }
  std::atomic<bool>& flag_;
};

}  // namespace

Service::Service(SessionStore& store, const Backend& pipeline_backend, PromptCatalog prompts)
    : store_(store), pipeline_(pipeline_backend), prompts_(std::move(prompts)) {}

void Service::add_chat_backend(const std::string& name, const Backend& backend) {
  if (chat_backends_.empty()) chat_backends_["default"] = &backend;
  chat_backends_[name] = &backend;
}

const Backend& Service::chat_backend_for(const Session& session) const {
  auto it = chat_backends_.find(session.config().backend);
  if (it == chat_backends_.end()) it = chat_backends_.find("default");
  if (it == chat_backends_.end()) return pipeline_;
  return *it->second;
}

std::shared_ptr<Session> Service::session(const std::string& id) { return store_.get(id); }

json Service::create_session(const json& body) {
  SessionConfig config = SessionConfig::from_json(body.is_null() ? json::object() : body);
  if (!chat_backends_.empty() && body.is_object() && body.contains("backend") &&
      !chat_backends_.count(config.backend)) {
    throw Error(ErrorCode::InvalidConfig, "unknown backend '" + config.backend + "'");
  }
  auto created = store_.create_session(config);
  return session_descriptor(*created);
}

json Service::import_session(const std::string& transcript) {
  std::istringstream in(transcript);
  auto imported = store_.import_session(in);
  return session_descriptor(*imported);
}

json Service::describe(const std::string& id) { return session_descriptor(*session(id)); }

json Service::messages(const std::string& id) { return session(id)->state().messages; }

json Service::goals(const std::string& id) {
  const auto state = session(id)->state();
  return {{"goals", state.ledger.goals()}, {"active", state.ledger.active_goals()}};
}

template <typename Fn>
json Service::control(const std::string& id, Fn&& fn) {
  auto s = session(id);
  std::unique_lock lock(s->turn_mutex(), std::try_to_lock);
  if (!lock.owns_lock() || s->turn_in_flight()) {
    throw Error(ErrorCode::TurnInFlight, "a turn is in flight for session " + id);
  }
  return fn(*s);
}

json Service::create_goal(const std::string& id, const json& body) {
  if (!body.is_object() || !body.contains("text") || !body["text"].is_string()) {
    throw Error(ErrorCode::InvalidRequest, "goal body needs a \"text\" string");
  }
  ControlAction action;
  action.kind = ControlKind::Create;
  action.text = body["text"].get<std::string>();
  const std::string type = body.value("type", std::string("request"));
  auto parsed = parse_goal_type(type);
  if (!parsed) throw Error(ErrorCode::InvalidRequest, "unknown goal type '" + type + "'");
  action.type = *parsed;
  action.locked = body.value("locked", false);
  return control(id, [&](Session& s) {
    s.append_control(action);
    const auto state = s.state();
    return json(state.ledger.goals().back());
  });
}

json Service::goal_action(const std::string& id, const std::string& goal, const std::string& name) {
  ControlAction action;
  if (name == "lock") action.kind = ControlKind::Lock;
  else if (name == "unlock") action.kind = ControlKind::Unlock;
  else if (name == "complete") action.kind = ControlKind::Complete;
  else if (name == "restore") action.kind = ControlKind::Restore;
  else throw Error(ErrorCode::InvalidRequest, "unknown goal action '" + name + "'");
  action.goal = parse_goal(goal);
  return control(id, [&](Session& s) {
    s.append_control(action);
    return json(s.state().ledger.goal(*action.goal));
  });
}

json Service::goal_history(const std::string& id, const std::string& goal) {
  const auto state = session(id)->state();
  const GoalId gid = parse_goal(goal);
  json out = json::array();
  for (const auto& [turn, category] : state.ledger.status_history(gid)) {
    out.push_back({{"turn", turn}, {"category", category}});
  }
  return out;
}

json Service::patch_pipeline(const std::string& id, const json& body) {
  if (!body.is_object()) throw Error(ErrorCode::InvalidRequest, "pipeline body must be an object");
  return control(id, [&](Session& s) {
    PipelineConfig config = s.state().config;
    try {
      for (const auto& [key, value] : body.items()) {
        if (key == "infer") config.infer_enabled = value.get<bool>();
        else if (key == "merge") config.merge_enabled = value.get<bool>();
        else if (key == "evaluate") config.evaluate_enabled = value.get<bool>();
        else if (key == "evaluation_concurrency_limit") config.evaluation_concurrency_limit = value.get<int>();
        else throw Error(ErrorCode::InvalidRequest, "unknown pipeline field '" + key + "'");
      }
    } catch (const json::exception& e) {
      throw Error(ErrorCode::InvalidRequest, std::string("pipeline toggle: ") + e.what());
    }
    config.validate();
    if (config != s.state().config) {
      ControlAction action;
      action.kind = ControlKind::Toggle;
      action.pipeline = config;
      s.append_control(action);
    }
    return json(config);
  });
}

json Service::timeline(const std::string& id) { return build_timeline(session(id)->events()); }

json Service::events(const std::string& id) { return group_events(session(id)->state()); }

json Service::snapshot(const std::string& id, int turn) {
  return session(id)->snapshot_at(turn);
}

std::string Service::transcript(const std::string& id) { return session(id)->export_transcript(); }

json Service::goal_view(const std::string& id, const std::string& goal, const std::string& mode_name,
                        std::size_t k, std::size_t m) {
  const auto state = session(id)->state();
  const GoalId gid = parse_goal(goal);
  const auto mode = parse_view_mode(mode_name);
  if (!mode) throw Error(ErrorCode::InvalidRequest, "invalid view mode '" + mode_name + "'");
  const auto evaluations = state.ledger.evaluations_for(gid);

  std::vector<Response> responses;
  for (const auto& e : evaluations) {
    for (const auto& msg : state.messages) {
      if (msg.id == e.message) responses.push_back({msg.id, msg.turn, msg.text});
    }
  }

  json out = {{"goal", gid}, {"mode", mode_name}, {"evaluations", evaluations}};
  json messages = json::array();
  for (const auto& r : responses) messages.push_back({{"id", r.message}, {"turn", r.turn}, {"text", r.text}});
  out["messages"] = messages;

  std::vector<HighlightSpan> spans;
  if (responses.empty()) {
    out["notice"] = "goal has not been evaluated";
  } else {
    switch (*mode) {
      case ViewMode::EvalExamples:
        for (const auto& r : responses) {
          auto part = evaluation_highlights(evaluations, r.message);
          spans.insert(spans.end(), part.begin(), part.end());
        }
        break;
      case ViewMode::KeyPhrases:
        spans = keyphrase_highlights(extract_keyphrases(responses, pipeline_, prompts_));
        break;
      case ViewMode::Similar:
      case ViewMode::Unique: {
        std::vector<Sentence> sentences;
        for (const auto& r : responses) {
          auto part = split_sentences(r.message, r.text);
          sentences.insert(sentences.end(), part.begin(), part.end());
        }
        if (*mode == ViewMode::Similar && responses.size() < 2) {
          out["notice"] = "similar sentences need at least two responses";
          break;
        }
        if (sentences.size() < 2) {
          out["notice"] = "InsufficientSentences: unique sentences need at least two sentences";
          break;
        }
        const auto matrix = similarity_matrix(sentences, pipeline_, &embeddings_);
        spans = *mode == ViewMode::Similar
                    ? similar_pair_highlights(matrix, top_similar_pairs(matrix, k))
                    : unique_sentence_highlights(matrix, unique_sentences(matrix, m));
        break;
      }
    }
  }
  out["spans"] = spans;
  return out;
}

TurnRecord Service::send_message(const std::string& id, const std::string& text,
                                 const std::function<void(const StreamFrame&)>& emit) {
  auto s = session(id);
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
    throw Error(ErrorCode::InvalidRequest, "message text is empty");
  }
  std::lock_guard lock(s->turn_mutex());
  InFlight in_flight(s->turn_in_flight());
  const auto state = s->state();

  TurnObserver observer;
  if (emit) {
    observer.on_chunk = [&](std::string_view chunk) {
      emit({StreamFrame::Kind::ChatChunk, {{"text", chunk}}});
    };
    observer.on_event = [&](const PipelineEvent& event) {
      emit({StreamFrame::Kind::PipelineEvent, event});
    };
  }
  const Backends backends{chat_backend_for(*s), pipeline_};
  TurnRecord record = run_turn(state, text, backends, prompts_, observer);
  s->append_turn(record);
  if (emit) {
    emit({StreamFrame::Kind::TurnComplete,
          {{"turn", record.turn}, {"response", record.response}, {"record", record}}});
  }
  return record;
}

// ---------------------------------------------------------------------------
// HTTP

HttpServer::HttpServer(Service& service)
    : service_(service), server_(std::make_unique<httplib::Server>()) {
  install_routes();
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) return server_->bind_to_any_port(host);
  return server_->bind_to_port(host, port) ? port : -1;
}

bool HttpServer::listen() { return server_->listen_after_bind(); }

void HttpServer::start() {
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

void HttpServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  json body = json::parse(req.body, nullptr, false);
  if (body.is_discarded()) throw Error(ErrorCode::InvalidRequest, "request body is not valid JSON");
  return body;
}

std::size_t size_param(const httplib::Request& req, const char* name, std::size_t fallback) {
  if (!req.has_param(name)) return fallback;
  const std::string text = req.get_param_value(name);
  std::size_t value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw Error(ErrorCode::InvalidRequest, std::string("query parameter ") + name + " must be a non-negative integer");
  }
  return value;
}

template <typename Fn>
httplib::Server::Handler guarded(int success_status, Fn fn) {
  return [success_status, fn](const httplib::Request& req, httplib::Response& res) {
    try {
      send_json(res, success_status, fn(req));
    } catch (const Error& e) {
      send_json(res, http_status(e.code()), error_body(e));
    } catch (const std::exception& e) {
      send_json(res, 500, {{"error", "Internal"}, {"message", e.what()}, {"status", 500}});
    }
  };
}

}  // namespace

void HttpServer::install_routes() {
  auto& s = *server_;
  Service& svc = service_;
  const std::string sid = "/v1/sessions/([^/]+)";

  s.Get("/v1/health", guarded(200, [](const httplib::Request&) { return json{{"ok", true}}; }));
  s.Post("/v1/sessions", guarded(201, [&svc](const httplib::Request& req) {
           return svc.create_session(parse_body(req));
         }));
  s.Post("/v1/sessions/import", guarded(201, [&svc](const httplib::Request& req) {
           return svc.import_session(req.body);
         }));
  s.Get(sid, guarded(200, [&svc](const httplib::Request& req) { return svc.describe(req.matches[1]); }));
  s.Get(sid + "/messages", guarded(200, [&svc](const httplib::Request& req) {
          return svc.messages(req.matches[1]);
        }));
  s.Get(sid + "/goals", guarded(200, [&svc](const httplib::Request& req) {
          return svc.goals(req.matches[1]);
        }));
  s.Post(sid + "/goals", guarded(201, [&svc](const httplib::Request& req) {
           return svc.create_goal(req.matches[1], parse_body(req));
         }));
  s.Post(sid + "/goals/([^/]+)/(lock|unlock|complete|restore)",
         guarded(200, [&svc](const httplib::Request& req) {
           return svc.goal_action(req.matches[1], req.matches[2], req.matches[3]);
         }));
  s.Get(sid + "/goals/([^/]+)/history", guarded(200, [&svc](const httplib::Request& req) {
          return svc.goal_history(req.matches[1], req.matches[2]);
        }));
  s.Get(sid + "/goals/([^/]+)/view", guarded(200, [&svc](const httplib::Request& req) {
          const std::string mode = req.has_param("mode") ? req.get_param_value("mode") : "eval_examples";
          return svc.goal_view(req.matches[1], req.matches[2], mode, size_param(req, "k", 5),
                               size_param(req, "m", 2));
        }));
  s.Patch(sid + "/pipeline", guarded(200, [&svc](const httplib::Request& req) {
            return svc.patch_pipeline(req.matches[1], parse_body(req));
          }));
  s.Get(sid + "/timeline", guarded(200, [&svc](const httplib::Request& req) {
          return svc.timeline(req.matches[1]);
        }));
  s.Get(sid + "/events", guarded(200, [&svc](const httplib::Request& req) {
          return svc.events(req.matches[1]);
        }));
  s.Get(sid + "/snapshot", guarded(200, [&svc](const httplib::Request& req) {
          const auto turn = size_param(req, "turn", svc.session(req.matches[1])->state().turn());
          return svc.snapshot(req.matches[1], static_cast<int>(turn));
        }));
  s.Get(sid + "/transcript", [&svc](const httplib::Request& req, httplib::Response& res) {
    try {
      res.set_content(svc.transcript(req.matches[1]), "application/x-ndjson");
    } catch (const Error& e) {
      send_json(res, http_status(e.code()), error_body(e));
    }
  });

  s.Post(sid + "/messages", [&svc](const httplib::Request& req, httplib::Response& res) {
    std::string id = req.matches[1];
    std::string text;
    try {
      svc.session(id);
      const json body = parse_body(req);
      if (!body.is_object() || !body.contains("text") || !body["text"].is_string()) {
        throw Error(ErrorCode::InvalidRequest, "message body needs a \"text\" string");
      }
      text = body["text"].get<std::string>();
      if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
        throw Error(ErrorCode::InvalidRequest, "message text is empty");
      }
      if (req.has_param("stream") && req.get_param_value("stream") == "0") {
        send_json(res, 200, svc.send_message(id, text));
        return;
      }
    } catch (const Error& e) {
      send_json(res, http_status(e.code()), error_body(e));
      return;
    }
    res.status = 200;
    res.set_chunked_content_provider(
        "application/x-ndjson", [&svc, id, text](std::size_t, httplib::DataSink& sink) {
          auto write = [&sink](const StreamFrame& frame) {
            const std::string line = frame.encode();
            sink.write(line.data(), line.size());
          };
          try {
            svc.send_message(id, text, write);
          } catch (const Error& e) {
            write({StreamFrame::Kind::Error, error_body(e)});
          } catch (const std::exception& e) {
            write({StreamFrame::Kind::Error, {{"error", "Internal"}, {"message", e.what()}, {"status", 500}}});
          }
          sink.done();
          return true;
        });
  });
}

}  // namespace goaltrack
