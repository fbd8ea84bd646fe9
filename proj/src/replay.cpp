#include "goaltrack/replay.hpp"

#include <cstdio>
#include <sstream>

#include "goaltrack/serialization.hpp"
#include "goaltrack/timeline.hpp"

namespace goaltrack {

using nlohmann::json;

ReplayInput read_replay_input(std::istream& in) {
  ReplayInput input;
  std::string text;
  std::size_t number = 0;
  bool header = false;
  auto fail = [&](const std::string& why) {
    throw Error(ErrorCode::MalformedTranscript, "transcript line " + std::to_string(number) + ": " + why)
        .with_line(number);
  };

  while (std::getline(in, text)) {
    ++number;
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) fail("not a JSON object");
    try {
      const auto kind = j.at("kind").get<std::string>();
      if (!header) {
        if (kind != "header") fail("first line must be the header");
        if (j.at("v").get<int>() != kTranscriptVersion) fail("unsupported transcript version");
        input.session = j.value("session", std::string("replay"));
        input.created_ms = j.value("created", std::int64_t{0});
        input.config = SessionConfig::from_json(j.value("config", json::object()));
        header = true;
        continue;
      }
      if (kind == "message") {
        if (j.at("role").get<Role>() != Role::User) continue;
        input.steps.push_back({number, j.at("text").get<std::string>(), std::nullopt});
      } else if (kind == "control") {
        input.steps.push_back({number, std::nullopt, control_from_json(j.at("event"))});
      } else if (kind != "turn") {
        fail("unknown line kind '" + kind + "'");
      }
    } catch (const json::exception& e) {
      fail(e.what());
    } catch (const Error& e) {
      if (e.code() == ErrorCode::MalformedTranscript) throw;
      fail(e.what());
    }
  }
  if (!header) {
    number = number ? number : 1;
    fail("missing header");
  }
  return input;
}

ReplayResult replay(const ReplayInput& input, const Backends& backends, const PromptCatalog& prompts,
                    const ReplayOptions& options) {
  SessionConfig config = input.config;
  if (options.stages) config.pipeline = *options.stages;
  ReplayResult result;
  result.session = Session::create(input.session, config, std::make_unique<MemoryEventLog>(),
                                   input.created_ms ? input.created_ms : 1);
  Session& session = *result.session;
  for (const auto& step : input.steps) {
    if (step.user_text) {
      session.append_turn(run_turn(session.state(), *step.user_text, backends, prompts));
      continue;
    }
    const ControlAction& action = *step.control;
    if (options.stages && action.kind == ControlKind::Toggle) {
      result.skipped_controls.push_back(
          {{"line", step.line}, {"event", control_to_json(action)}, {"reason", "stages fixed on the command line"}});
      continue;
    }
    try {
      session.append_control(action);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::StorageFailure) throw;
      result.skipped_controls.push_back(
          {{"line", step.line}, {"event", control_to_json(action)}, {"reason", e.what()}});
    }
  }
  return result;
}

json build_report(const ReplayResult& result) {
  const Session& session = *result.session;
  const auto state = session.state();
  json report = {{"v", kReportVersion},
                 {"session", session.id()},
                 {"config", session.config().to_json()},
                 {"turns", state.turns},
                 {"timeline", build_timeline(session.events())},
                 {"events", group_events(state)},
                 {"skipped_controls", result.skipped_controls}};
  try {
    report["stats"] = compute_stats(state);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NoEvaluations) throw;
    report["stats"] = nullptr;
  }
  json highlights = json::array();
  for (const auto& record : state.turns) {
    highlights.push_back({{"message", record.response},
                          {"spans", evaluation_highlights(record.evaluations, record.response)}});
  }
  report["highlights"] = highlights;
  return report;
}

std::string summary_table(const json& report) {
  std::ostringstream out;
  char line[128];
  std::snprintf(line, sizeof line, "%-6s %8s %11s %7s %10s\n", "turn", "confirm", "contradict",
                "ignore", "evaluated");
  out << line;
  const json& stats = report.at("stats");
  if (stats.is_null()) {
    for (const auto& record : report.at("turns")) {
      std::snprintf(line, sizeof line, "%-6d %8s %11s %7s %10d\n", record.at("turn").get<int>(), "-",
                    "-", "-", 0);
      out << line;
    }
    out << "no evaluations\n";
    return out.str();
  }
  for (const auto& row : stats.at("per_turn")) {
    const int c = row.at("confirm"), x = row.at("contradict"), i = row.at("ignore");
    std::snprintf(line, sizeof line, "%-6d %8d %11d %7d %10d\n", row.at("turn").get<int>(), c, x, i,
                  c + x + i);
    out << line;
  }
  out << "turns " << stats.at("turns").get<int>() << ", variability "
      << stats.at("variability").get<int>() << "\n";
  return out.str();
}

}  // namespace goaltrack
