#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "goaltrack/pipeline.hpp"
#include "goaltrack/session_store.hpp"
#include "goaltrack/text_analysis.hpp"

namespace httplib {
class Server;
}

namespace goaltrack {

// 400 validation, 404 missing, 409 state conflict, 502 provider, 500 other.
int http_status(ErrorCode code);

enum class ViewMode { EvalExamples, KeyPhrases, Similar, Unique };
std::optional<ViewMode> parse_view_mode(std::string_view text);

struct StreamFrame {
  enum class Kind { ChatChunk, PipelineEvent, TurnComplete, Error } kind;
  nlohmann::json payload;

  // One NDJSON line, newline included.
  std::string encode() const;
};

// Transport-independent implementation of the HTTP API. Methods return the
// response body and throw Error for failures.
class Service {
 public:
  Service(SessionStore& store, const Backend& pipeline_backend, PromptCatalog prompts = PromptCatalog::builtin());

  // Registers a chat backend that session configs may name. The first one
  // registered is also registered as "default".
  void add_chat_backend(const std::string& name, const Backend& backend);

  nlohmann::json create_session(const nlohmann::json& body);
  nlohmann::json import_session(const std::string& transcript);
  nlohmann::json describe(const std::string& id);
  nlohmann::json messages(const std::string& id);
  nlohmann::json goals(const std::string& id);
  nlohmann::json create_goal(const std::string& id, const nlohmann::json& body);
  nlohmann::json goal_action(const std::string& id, const std::string& goal, const std::string& action);
  nlohmann::json goal_history(const std::string& id, const std::string& goal);
  nlohmann::json patch_pipeline(const std::string& id, const nlohmann::json& body);
  nlohmann::json timeline(const std::string& id);
  nlohmann::json events(const std::string& id);
  nlohmann::json goal_view(const std::string& id, const std::string& goal, const std::string& mode,
                           std::size_t k = 5, std::size_t m = 2);
  nlohmann::json snapshot(const std::string& id, int turn);
  std::string transcript(const std::string& id);

  // Runs one turn; queued behind any turn already running for the session.
  TurnRecord send_message(const std::string& id, const std::string& text,
                          const std::function<void(const StreamFrame&)>& emit = {});

  // Throws UnknownSession unless the session exists.
  std::shared_ptr<Session> session(const std::string& id);

 private:
  const Backend& chat_backend_for(const Session& session) const;
  template <typename Fn>
  nlohmann::json control(const std::string& id, Fn&& fn);

  SessionStore& store_;
  const Backend& pipeline_;
  std::map<std::string, const Backend*> chat_backends_;
  PromptCatalog prompts_;
  EmbeddingCache embeddings_;
};

// HTTP/JSON binding of Service under /v1.
class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();

  // Binds; port 0 picks a free port. Returns the bound port or -1.
  int bind(const std::string& host, int port);
  // Blocks until stop().
  bool listen();
  // Runs listen() on a background thread.
  void start();
  void stop();

 private:
  void install_routes();

  Service& service_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
};

}  // namespace goaltrack
