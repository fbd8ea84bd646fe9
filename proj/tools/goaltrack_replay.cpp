// Replays a transcript through the goal pipeline and writes a JSON report.
//
// Exit codes: 0 success, 2 transcript error, 3 backend error, 1 anything else.

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "goaltrack/replay.hpp"
#include "goaltrack/serialization.hpp"

using namespace goaltrack;

namespace {

PipelineConfig parse_stages(const std::string& list) {
  PipelineConfig config;
  config.infer_enabled = config.merge_enabled = config.evaluate_enabled = false;
  std::stringstream in(list);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item == "infer") config.infer_enabled = true;
    else if (item == "merge") config.merge_enabled = true;
    else if (item == "evaluate") config.evaluate_enabled = true;
    else if (!item.empty()) throw Error(ErrorCode::InvalidConfig, "unknown stage '" + item + "'");
  }
  config.validate();
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Replay a conversation transcript through the goal pipeline"};
  std::string transcript_path, mock_path, backend_path, out_path, stages, format = "json";
  app.add_option("--transcript", transcript_path, "Transcript JSONL")->required()->check(CLI::ExistingFile);
  app.add_option("--mock", mock_path, "Scripted mock backend file")->check(CLI::ExistingFile);
  app.add_option("--backend", backend_path, "Live backend config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--out", out_path, "Report path (stdout if omitted)");
  app.add_option("--stages", stages, "Comma-separated stages to run, e.g. infer,merge,evaluate");
  app.add_option("--format", format, "json or summary")->check(CLI::IsMember({"json", "summary"}));
  CLI11_PARSE(app, argc, argv);

  try {
    if (mock_path.empty() == backend_path.empty()) {
      throw Error(ErrorCode::InvalidConfig, "give exactly one of --mock or --backend");
    }
    std::unique_ptr<Backend> backend;
    if (!mock_path.empty()) {
      backend = std::make_unique<ScriptedMock>(ScriptedMock::load(mock_path));
    } else {
      std::ifstream in(backend_path);
      auto j = nlohmann::json::parse(in, nullptr, false);
      if (j.is_discarded()) throw Error(ErrorCode::InvalidConfig, "backend config is not JSON");
      backend = make_backend(BackendConfig::from_json(j.contains("backend") ? j["backend"] : j));
    }

    std::ifstream in(transcript_path);
    const ReplayInput input = read_replay_input(in);
    ReplayOptions options;
    if (!stages.empty()) options.stages = parse_stages(stages);

    const auto result = replay(input, Backends{*backend, *backend}, PromptCatalog::builtin(), options);
    const auto report = build_report(result);
    const std::string text = format == "json" ? report.dump(2) + "\n" : summary_table(report);
    if (out_path.empty()) {
      std::cout << text;
    } else {
      std::ofstream out(out_path, std::ios::binary);
      out << text;
      if (!out) throw Error(ErrorCode::StorageFailure, "cannot write " + out_path);
    }
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.code()) << ": " << e.what() << "\n";
    if (e.code() == ErrorCode::MalformedTranscript) {
      std::cerr << "line " << e.line() << "\n";
      return 2;
    }
    if (is_backend_error(e.code())) return 3;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
