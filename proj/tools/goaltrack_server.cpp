// HTTP service for goal-tracked conversations.
//
// Settings come from an optional JSON config file, then environment
// variables, then flags (later wins):
//   GOALTRACK_HOST, GOALTRACK_PORT, GOALTRACK_DATA_DIR, GOALTRACK_MOCK,
//   GOALTRACK_PROMPT_DIR

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "goaltrack/service.hpp"

using namespace goaltrack;

namespace {

HttpServer* running = nullptr;

void on_signal(int) {
  if (running) running->stop();
}

std::string env_or(const char* name, std::string fallback) {
  const char* value = std::getenv(name);
  return value && *value ? value : fallback;
}

}  // namespace

int main(int argc, char** argv) {
  std::string config_path;
  {
    CLI::App pre;
    pre.allow_extras();
    pre.set_help_flag();
    pre.add_option("--config", config_path);
    try {
      pre.parse(argc, argv);
    } catch (const CLI::ParseError&) {
    }
  }

  nlohmann::json file = nlohmann::json::object();
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    file = nlohmann::json::parse(in, nullptr, false);
    if (file.is_discarded() || !file.is_object()) {
      std::cerr << "error: " << config_path << " is not a JSON object\n";
      return 1;
    }
  }

  std::string host = env_or("GOALTRACK_HOST", file.value("host", std::string("127.0.0.1")));
  int port = std::atoi(env_or("GOALTRACK_PORT", std::to_string(file.value("port", 8080))).c_str());
  std::string data_dir = env_or("GOALTRACK_DATA_DIR", file.value("data_dir", std::string("data")));
  std::string mock = env_or("GOALTRACK_MOCK", file.value("mock", std::string()));
  std::string prompt_dir = env_or("GOALTRACK_PROMPT_DIR", file.value("prompt_dir", std::string()));

  CLI::App app{"Goal-tracking chat service"};
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--host", host, "Bind address");
  app.add_option("--port", port, "Port; 0 picks a free one");
  app.add_option("--data-dir", data_dir, "Session log directory; empty keeps sessions in memory");
  app.add_option("--mock", mock, "Serve from a scripted mock instead of the configured backend");
  app.add_option("--prompt-dir", prompt_dir, "Load stage prompts from this directory");
  CLI11_PARSE(app, argc, argv);

  try {
    std::unique_ptr<Backend> backend;
    if (!mock.empty()) {
      backend = std::make_unique<ScriptedMock>(ScriptedMock::load(mock));
    } else {
      backend = make_backend(BackendConfig::from_json(file.value("backend", nlohmann::json::object())));
    }
    SessionStore store(data_dir);
    Service service(store, *backend,
                    prompt_dir.empty() ? PromptCatalog::builtin() : PromptCatalog::load(prompt_dir));
    service.add_chat_backend(mock.empty() ? "live" : "mock", *backend);

    HttpServer server(service);
    const int bound = server.bind(host, port);
    if (bound < 0) {
      std::cerr << "error: cannot bind " << host << ":" << port << "\n";
      return 1;
    }
    running = &server;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::cerr << "listening on " << host << ":" << bound << "\n";
    server.listen();
    running = nullptr;
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.code()) << ": " << e.what() << "\n";
    return 1;
  }
}
