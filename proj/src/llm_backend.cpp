#include "goaltrack/llm_backend.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <httplib.h>

namespace goaltrack {

using nlohmann::json;

std::string_view to_string(Role role) {
  switch (role) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
  }
  return "user";
}

void BackendConfig::validate() const {
  if (!(timeout_seconds > 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "backend timeout must be positive");
  }
  if (max_retries < 0) {
    throw Error(ErrorCode::InvalidConfig, "backend max_retries must be >= 0");
  }
}

BackendConfig BackendConfig::from_json(const json& j) {
  BackendConfig c;
  try {
    c.provider = j.value("provider", c.provider);
    c.model = j.value("model", c.model);
    c.endpoint = j.value("endpoint", c.endpoint);
    c.credential_env = j.value("credential_env", c.credential_env);
    c.embedding_model = j.value("embedding_model", c.embedding_model);
    c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
    c.max_retries = j.value("max_retries", c.max_retries);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("backend config: ") + e.what());
  }
  c.validate();
  return c;
}

json BackendConfig::to_json() const {
  return {{"provider", provider},           {"model", model},
          {"endpoint", endpoint},           {"credential_env", credential_env},
          {"embedding_model", embedding_model}, {"timeout_seconds", timeout_seconds},
          {"max_retries", max_retries}};
}

double EmbeddingVector::dot(const EmbeddingVector& other) const {
  if (other.dimension() != dimension()) {
    throw Error(ErrorCode::DimensionMismatch, "embedding dimensions differ");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < components.size(); ++i) sum += components[i] * other.components[i];
  return sum;
}

std::string CallContext::key() const {
  std::string out = stage + ":" + std::to_string(turn);
  if (goal_index > 0) out += ":" + std::to_string(goal_index);
  return out;
}

std::string complete_chat(const Backend& backend, const std::vector<ChatMessage>& messages,
                          const CallContext& context, const ChunkSink& sink) {
  if (messages.empty()) {
    throw Error(ErrorCode::PreconditionViolation, "chat completion needs at least one message");
  }
  for (const auto& m : messages) {
    if (m.role != Role::System && m.content.empty()) {
      throw Error(ErrorCode::PreconditionViolation, "user/assistant message content is empty");
    }
  }
  std::string full;
  backend.stream_chat(messages, context, [&](std::string_view text, bool end) {
    full.append(text);
    if (sink) sink(text, end);
  });
  return full;
}

std::string strip_code_fence(std::string_view text) {
  auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  auto last = text.find_last_not_of(" \t\r\n");
  std::string_view body = text.substr(first, last - first + 1);
  if (body.substr(0, 3) != "```") return std::string(body);
  auto nl = body.find('\n');
  if (nl == std::string_view::npos) return std::string(body);
  body.remove_prefix(nl + 1);
  auto tail = body.rfind("```");
  if (tail != std::string_view::npos && body.find_first_not_of(" \t\r\n", tail + 3) == std::string_view::npos) {
    body = body.substr(0, tail);
  }
  return std::string(body);
}

json complete_structured(const Backend& backend, std::vector<ChatMessage> messages,
                         CallContext context) {
  if (messages.empty() || messages.front().content.empty()) {
    throw Error(ErrorCode::PreconditionViolation, "structured prompt is empty");
  }
  const int retries = backend.max_retries();
  std::string raw;
  for (int attempt = 0; attempt <= retries; ++attempt) {
    context.attempt = attempt;
    raw = complete_chat(backend, messages, context);
    json parsed = json::parse(strip_code_fence(raw), nullptr, /*allow_exceptions=*/false);
    if (!parsed.is_discarded()) return parsed;
    messages.push_back({Role::Assistant, raw.empty() ? std::string(" ") : raw});
    messages.push_back({Role::User, std::string(kJsonRetryInstruction)});
  }
  throw Error(ErrorCode::MalformedOutput,
              context.stage + " reply is not valid JSON after " + std::to_string(retries + 1) +
                  " attempt(s)")
      .with_raw(raw);
}

json complete_structured(const Backend& backend, const std::string& prompt, CallContext context) {
  return complete_structured(backend, std::vector<ChatMessage>{{Role::User, prompt}},
                             std::move(context));
}

EmbeddingVector normalize(std::vector<double> raw) {
  double norm = 0.0;
  for (double v : raw) norm += v * v;
  norm = std::sqrt(norm);
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw Error(ErrorCode::DimensionMismatch, "embedding has zero or non-finite norm");
  }
  for (double& v : raw) v /= norm;
  return EmbeddingVector{std::move(raw)};
}

std::vector<EmbeddingVector> embed(const Backend& backend, const std::vector<std::string>& texts) {
  if (texts.empty()) throw Error(ErrorCode::PreconditionViolation, "nothing to embed");
  for (const auto& t : texts) {
    if (t.empty()) throw Error(ErrorCode::PreconditionViolation, "cannot embed empty text");
  }
  auto raw = backend.embed_raw(texts);
  if (raw.size() != texts.size()) {
    throw Error(ErrorCode::DimensionMismatch, "provider returned " + std::to_string(raw.size()) +
                                                  " vectors for " +
                                                  std::to_string(texts.size()) + " inputs");
  }
  std::vector<EmbeddingVector> out;
  out.reserve(raw.size());
  const std::size_t dim = raw.front().size();
  for (auto& v : raw) {
    if (v.empty() || v.size() != dim) {
      throw Error(ErrorCode::DimensionMismatch, "provider returned a ragged embedding batch");
    }
    out.push_back(normalize(std::move(v)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// ScriptedMock

ScriptedMock::ScriptedMock(std::map<std::string, Reply> script,
                           std::map<std::string, std::vector<double>> embeddings, int max_retries)
    : script_(std::move(script)), embeddings_(std::move(embeddings)), max_retries_(max_retries) {}

namespace {

ErrorCode failure_code(std::string_view name) {
  if (name == "timeout") return ErrorCode::Timeout;
  if (name == "unreachable") return ErrorCode::ProviderUnreachable;
  if (name == "refusal") return ErrorCode::ProviderRefusal;
  throw Error(ErrorCode::InvalidConfig, "unknown scripted failure '" + std::string(name) + "'");
}

}  // namespace

ScriptedMock ScriptedMock::from_json(const json& j, int max_retries) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, "mock script must be a JSON object");
  std::map<std::string, Reply> script;
  std::map<std::string, std::vector<double>> embeddings;
  for (const auto& [key, value] : j.items()) {
    if (key == "embeddings") {
      if (!value.is_object()) throw Error(ErrorCode::InvalidConfig, "embeddings must be an object");
      for (const auto& [text, vec] : value.items()) {
        try {
          embeddings[text] = vec.get<std::vector<double>>();
        } catch (const json::exception&) {
          throw Error(ErrorCode::InvalidConfig, "embedding for '" + text + "' is not numeric");
        }
      }
    } else if (value.is_string()) {
      script[key] = std::vector<std::string>{value.get<std::string>()};
    } else if (value.is_array() && !value.empty() &&
               std::all_of(value.begin(), value.end(), [](const json& v) { return v.is_string(); })) {
      script[key] = value.get<std::vector<std::string>>();
    } else if (value.is_object() && value.contains("error") && value["error"].is_string()) {
      script[key] = Failure{failure_code(value["error"].get<std::string>())};
    } else {
      throw Error(ErrorCode::InvalidConfig, "mock script entry '" + key + "' has an invalid shape");
    }
  }
  return ScriptedMock(std::move(script), std::move(embeddings), max_retries);
}

ScriptedMock ScriptedMock::load(const std::filesystem::path& path, int max_retries) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::InvalidConfig, "cannot open mock script " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) {
    throw Error(ErrorCode::InvalidConfig, "mock script " + path.string() + " is not valid JSON");
  }
  return from_json(j, max_retries);
}

void ScriptedMock::stream_chat(const std::vector<ChatMessage>&, const CallContext& context,
                               const ChunkSink& sink) const {
  const std::string key = context.key();
  auto it = script_.find(key);
  if (it == script_.end()) {
    throw Error(ErrorCode::MissingScript, "no scripted reply for '" + key + "'");
  }
  if (const auto* failure = std::get_if<Failure>(&it->second)) {
    throw Error(failure->code, "scripted " + std::string(to_string(failure->code)) + " for '" + key + "'");
  }
  const auto& replies = std::get<std::vector<std::string>>(it->second);
  const std::string& reply =
      replies[std::min<std::size_t>(static_cast<std::size_t>(context.attempt), replies.size() - 1)];
  // One chunk per word, trailing whitespace attached.
  std::size_t pos = 0;
  while (pos < reply.size()) {
    std::size_t word_end = reply.find_first_of(" \t\n", pos);
    if (word_end == std::string::npos) word_end = reply.size();
    std::size_t next = reply.find_first_not_of(" \t\n", word_end);
    if (next == std::string::npos) next = reply.size();
    sink(std::string_view(reply).substr(pos, next - pos), false);
    pos = next;
  }
  sink({}, true);
}

std::vector<std::vector<double>> ScriptedMock::embed_raw(const std::vector<std::string>& texts) const {
  std::vector<std::vector<double>> out;
  out.reserve(texts.size());
  for (const auto& text : texts) {
    auto it = embeddings_.find(text);
    if (it == embeddings_.end()) {
      throw Error(ErrorCode::MissingScript, "no scripted embedding for '" + text + "'");
    }
    out.push_back(it->second);
  }
  return out;
}

// ---------------------------------------------------------------------------
// HttpBackend

namespace {

struct Endpoint {
  std::string base;  // scheme://host[:port]
  std::string prefix;  // path prefix without trailing slash
};

Endpoint split_endpoint(const std::string& url) {
  auto scheme_end = url.find("://");
  std::size_t path_start = url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  if (path_start == std::string::npos) return {url, ""};
  std::string prefix = url.substr(path_start);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {url.substr(0, path_start), prefix};
}

httplib::Client make_client(const BackendConfig& config) {
  httplib::Client client(split_endpoint(config.endpoint).base);
  const auto whole = std::chrono::duration<double>(config.timeout_seconds);
  const auto micros = std::chrono::duration_cast<std::chrono::microseconds>(whole);
  const auto usec = std::max<std::int64_t>(micros.count(), 1);
  client.set_connection_timeout(usec / 1000000, usec % 1000000);
  client.set_read_timeout(usec / 1000000, usec % 1000000);
  client.set_write_timeout(usec / 1000000, usec % 1000000);
  if (const char* key = std::getenv(config.credential_env.c_str()); key && *key) {
    client.set_bearer_token_auth(key);
  }
  return client;
}

[[noreturn]] void throw_transport(httplib::Error err, double elapsed, double timeout) {
  if (err == httplib::Error::ConnectionTimeout || elapsed >= timeout * 0.95) {
    throw Error(ErrorCode::Timeout, "provider request timed out (" + httplib::to_string(err) + ")");
  }
  throw Error(ErrorCode::ProviderUnreachable, "provider unreachable: " + httplib::to_string(err));
}

void check_status(int status, const std::string& body) {
  if (status < 200 || status >= 300) {
    throw Error(ErrorCode::ProviderRefusal,
                "provider returned HTTP " + std::to_string(status) + ": " + body.substr(0, 512));
  }
}

}  // namespace

HttpBackend::HttpBackend(BackendConfig config) : config_(std::move(config)) { config_.validate(); }

void HttpBackend::stream_chat(const std::vector<ChatMessage>& messages, const CallContext&,
                              const ChunkSink& sink) const {
  json body = {{"model", config_.model}, {"stream", true}, {"messages", json::array()}};
  for (const auto& m : messages) {
    body["messages"].push_back({{"role", to_string(m.role)}, {"content", m.content}});
  }

  auto client = make_client(config_);
  httplib::Request req;
  req.method = "POST";
  req.path = split_endpoint(config_.endpoint).prefix + "/v1/chat/completions";
  req.body = body.dump();
  req.set_header("Content-Type", "application/json");
  req.set_header("Accept", "text/event-stream");

  std::string pending;
  std::string error_body;
  int status = 0;
  bool done = false;
  req.response_handler = [&](const httplib::Response& res) {
    status = res.status;
    return true;
  };
  req.content_receiver = [&](const char* data, std::size_t len, std::uint64_t, std::uint64_t) {
    if (status < 200 || status >= 300) {
      error_body.append(data, len);
      return true;
    }
    pending.append(data, len);
    std::size_t nl;
    while ((nl = pending.find('\n')) != std::string::npos) {
      std::string line = pending.substr(0, nl);
      pending.erase(0, nl + 1);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.rfind("data:", 0) != 0) continue;
      std::string_view payload = std::string_view(line).substr(5);
      while (!payload.empty() && payload.front() == ' ') payload.remove_prefix(1);
      if (payload == "[DONE]") {
        done = true;
        continue;
      }
      json event = json::parse(payload, nullptr, false);
      if (event.is_discarded()) continue;
      const auto& choices = event.value("choices", json::array());
      if (choices.empty()) continue;
      const auto& delta = choices[0].value("delta", json::object());
      if (auto it = delta.find("content"); it != delta.end() && it->is_string()) {
        const auto& text = it->get_ref<const std::string&>();
        if (!text.empty()) sink(text, false);
      }
    }
    return true;
  };

  const auto start = std::chrono::steady_clock::now();
  httplib::Response res;
  httplib::Error err = httplib::Error::Success;
  const bool ok = client.send(req, res, err);
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!ok) throw_transport(err, elapsed, config_.timeout_seconds);
  check_status(status ? status : res.status, error_body);
  (void)done;
  sink({}, true);
}

std::vector<std::vector<double>> HttpBackend::embed_raw(const std::vector<std::string>& texts) const {
  json body = {{"model", config_.embedding_model}, {"input", texts}};
  auto client = make_client(config_);
  const auto start = std::chrono::steady_clock::now();
  auto res = client.Post(split_endpoint(config_.endpoint).prefix + "/v1/embeddings", body.dump(),
                         "application/json");
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!res) throw_transport(res.error(), elapsed, config_.timeout_seconds);
  check_status(res->status, res->body);
  json reply = json::parse(res->body, nullptr, false);
  if (reply.is_discarded() || !reply.contains("data") || !reply["data"].is_array()) {
    throw Error(ErrorCode::MalformedOutput, "embedding reply is not the expected JSON")
        .with_raw(res->body);
  }
  std::vector<std::vector<double>> out(texts.size());
  for (const auto& item : reply["data"]) {
    const auto index = item.value("index", std::size_t{0});
    if (index >= out.size()) {
      throw Error(ErrorCode::DimensionMismatch, "embedding index out of range");
    }
    out[index] = item.at("embedding").get<std::vector<double>>();
  }
  return out;
}

std::unique_ptr<Backend> make_backend(const BackendConfig& config) {
  if (config.provider != "openai" && config.provider != "openai-compatible") {
    throw Error(ErrorCode::InvalidConfig, "unsupported provider '" + config.provider + "'");
  }
  return std::make_unique<HttpBackend>(config);
}

}  // namespace goaltrack
