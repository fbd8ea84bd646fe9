#pragma once

#include <cstdint>
#include <istream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "goaltrack/pipeline.hpp"
#include "goaltrack/session_store.hpp"

namespace goaltrack {

inline constexpr int kReportVersion = 1;

// The replayable part of a transcript: the header plus, in order, every user
// message and control action. Recorded assistant messages and turn records
// are read past; the replay produces its own.
struct ReplayInput {
  struct Step {
    std::size_t line = 0;
    std::optional<std::string> user_text;
    std::optional<ControlAction> control;
  };

  std::string session;
  std::int64_t created_ms = 0;
  SessionConfig config;
  std::vector<Step> steps;
};

// Throws MalformedTranscript with the offending line number.
ReplayInput read_replay_input(std::istream& in);

struct ReplayOptions {
  // Replaces the recorded pipeline flags; recorded toggles are then skipped.
  std::optional<PipelineConfig> stages;
};

struct ReplayResult {
  std::shared_ptr<Session> session;
  // Recorded controls that no longer apply to the replayed ledger.
  std::vector<nlohmann::json> skipped_controls;
};

// Runs every user message through the pipeline, applying recorded controls
// at their recorded positions. Backend errors propagate.
ReplayResult replay(const ReplayInput& input, const Backends& backends, const PromptCatalog& prompts,
                    const ReplayOptions& options = {});

// Versioned report: turns, timeline, events, stats, evaluation highlights.
nlohmann::json build_report(const ReplayResult& result);

// Fixed-width table of per-turn status counts and variability.
std::string summary_table(const nlohmann::json& report);

}  // namespace goaltrack
