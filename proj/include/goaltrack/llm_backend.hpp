#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "goaltrack/error.hpp"

namespace goaltrack {

enum class Role { System, User, Assistant };

std::string_view to_string(Role role);

struct ChatMessage {
  Role role = Role::User;
  std::string content;

  bool operator==(const ChatMessage&) const = default;
};

struct BackendConfig {
  std::string provider = "openai";
  std::string model = "gpt-4o";
  std::string endpoint = "https://api.openai.com";
  std::string credential_env = "OPENAI_API_KEY";
  std::string embedding_model = "text-embedding-3-small";
  double timeout_seconds = 60.0;
  int max_retries = 2;

  // Throws InvalidConfig unless timeout > 0 and retries >= 0.
  void validate() const;

  static BackendConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct EmbeddingVector {
  std::vector<double> components;

  std::size_t dimension() const { return components.size(); }
  double dot(const EmbeddingVector& other) const;
};

// Identifies one provider call. The scripted mock keys its replies on
// `key()`; `attempt` counts structured-output retries from 0.
struct CallContext {
  std::string stage;
  int turn = 0;
  int goal_index = 0;  // 1-based position among evaluated goals; 0 if unused
  int attempt = 0;

  std::string key() const;
};

// Receives streamed text. Called once per chunk, then once with end = true
// and empty text.
using ChunkSink = std::function<void(std::string_view text, bool end)>;

class Backend {
 public:
  virtual ~Backend() = default;

  virtual void stream_chat(const std::vector<ChatMessage>& messages, const CallContext& context,
                           const ChunkSink& sink) const = 0;

  // Raw provider vectors; normalization happens in embed().
  virtual std::vector<std::vector<double>> embed_raw(const std::vector<std::string>& texts) const = 0;

  virtual int max_retries() const { return 2; }
};

// Streams the reply through `sink` and returns the joined text.
std::string complete_chat(const Backend& backend, const std::vector<ChatMessage>& messages,
                          const CallContext& context, const ChunkSink& sink = {});

// Appended as a user turn after a reply that failed to parse.
inline constexpr std::string_view kJsonRetryInstruction =
    "Your previous reply was not valid JSON. Respond ONLY with valid JSON.";

// Requests a JSON reply, retrying up to backend.max_retries() times on parse
// failure. Throws MalformedOutput (with the last raw reply) when exhausted.
nlohmann::json complete_structured(const Backend& backend, std::vector<ChatMessage> messages,
                                   CallContext context);
nlohmann::json complete_structured(const Backend& backend, const std::string& prompt,
                                   CallContext context);

// Strips a leading ```/```json fence line and a trailing ``` line.
std::string strip_code_fence(std::string_view text);

// One unit-norm vector per input, in input order.
std::vector<EmbeddingVector> embed(const Backend& backend, const std::vector<std::string>& texts);

EmbeddingVector normalize(std::vector<double> raw);

// Deterministic stand-in for chat and embedding providers.
//
// Script file (JSON object):
//   "<stage>:<turn>[:<goal-index>]" -> reply text
//                                    | [reply per attempt, last one repeats]
//                                    | {"error": "timeout"|"unreachable"|"refusal"}
//   "embeddings" -> {"<exact text>": [numbers...], ...}
//
// Lookups are total: a missing key throws MissingScript.
class ScriptedMock final : public Backend {
 public:
  struct Failure {
    ErrorCode code = ErrorCode::ProviderUnreachable;
  };
  using Reply = std::variant<std::vector<std::string>, Failure>;

  ScriptedMock() = default;
  ScriptedMock(std::map<std::string, Reply> script,
               std::map<std::string, std::vector<double>> embeddings, int max_retries = 2);

  static ScriptedMock from_json(const nlohmann::json& j, int max_retries = 2);
  static ScriptedMock load(const std::filesystem::path& path, int max_retries = 2);

  void stream_chat(const std::vector<ChatMessage>& messages, const CallContext& context,
                   const ChunkSink& sink) const override;
  std::vector<std::vector<double>> embed_raw(const std::vector<std::string>& texts) const override;
  int max_retries() const override { return max_retries_; }

  const std::map<std::string, Reply>& script() const { return script_; }

 private:
  std::map<std::string, Reply> script_;
  std::map<std::string, std::vector<double>> embeddings_;
  int max_retries_ = 2;
};

// OpenAI-compatible HTTP provider: streaming chat completions over SSE and
// the embeddings endpoint.
class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(BackendConfig config);

  void stream_chat(const std::vector<ChatMessage>& messages, const CallContext& context,
                   const ChunkSink& sink) const override;
  std::vector<std::vector<double>> embed_raw(const std::vector<std::string>& texts) const override;
  int max_retries() const override { return config_.max_retries; }

  const BackendConfig& config() const { return config_; }

 private:
  BackendConfig config_;
};

std::unique_ptr<Backend> make_backend(const BackendConfig& config);

}  // namespace goaltrack
