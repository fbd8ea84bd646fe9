#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "goaltrack/llm_backend.hpp"
#include "goaltrack/pipeline.hpp"
#include "goaltrack/session_store.hpp"
#include "goaltrack/text_analysis.hpp"

namespace testing_support {

using namespace goaltrack;

std::filesystem::path data_path(const std::string& name);
nlohmann::json load_json(const std::string& name);
std::string read_file(const std::filesystem::path& path);

// Four-turn writing session with six preloaded locked goals.
ScriptedMock study_mock();
SessionConfig study_config();
std::vector<std::string> study_messages();

// Runs the study script through `session`, completing g7 after turn 2 as
// the recorded transcript does. Stops after `turns` turns.
void run_study(Session& session, const Backend& backend, int turns = 4);

std::string sha256_hex(std::string_view bytes);

// Builds a mock from a plain key -> reply map.
ScriptedMock mock_from(const nlohmann::json& script, int max_retries = 2);

// Wraps another backend and fails every call whose key matches.
class FailingBackend final : public Backend {
 public:
  FailingBackend(const Backend& inner, std::set<std::string> failing_keys,
                 ErrorCode code = ErrorCode::ProviderUnreachable)
      : inner_(inner), failing_(std::move(failing_keys)), code_(code) {}

  void stream_chat(const std::vector<ChatMessage>& messages, const CallContext& context,
                   const ChunkSink& sink) const override;
  std::vector<std::vector<double>> embed_raw(const std::vector<std::string>& texts) const override {
    return inner_.embed_raw(texts);
  }
  int max_retries() const override { return inner_.max_retries(); }

 private:
  const Backend& inner_;
  std::set<std::string> failing_;
  ErrorCode code_;
};

// Memory log whose appends fail while `broken` is set.
class FlakyLog final : public EventLog {
 public:
  explicit FlakyLog(bool* broken) : broken_(broken) {}
  void append(const std::vector<StoredEvent>& events) override;
  std::vector<StoredEvent> read_all() const override { return inner_.read_all(); }

 private:
  bool* broken_;
  MemoryEventLog inner_;
};

struct TempDir {
  TempDir();
  ~TempDir();
  std::filesystem::path path;
};

// Minimal property runner: generate, check, and on failure shrink greedily
// to a smaller failing case.
template <typename T>
struct PropertyOutcome {
  bool passed = true;
  int cases = 0;
  std::optional<T> counterexample;
  std::string message;
  int shrink_steps = 0;
};

template <typename T>
PropertyOutcome<T> check_property(int cases, std::uint64_t seed,
                                  const std::function<T(std::mt19937_64&)>& generate,
                                  const std::function<std::vector<T>(const T&)>& shrink,
                                  const std::function<std::optional<std::string>(const T&)>& check) {
  PropertyOutcome<T> outcome;
  std::mt19937_64 rng(seed);
  for (int i = 0; i < cases; ++i) {
    T value = generate(rng);
    ++outcome.cases;
    auto failure = check(value);
    if (!failure) continue;
    bool progressed = true;
    while (progressed && outcome.shrink_steps < 10000) {
      progressed = false;
      for (const T& smaller : shrink(value)) {
        if (auto f = check(smaller)) {
          value = smaller;
          failure = f;
          progressed = true;
          ++outcome.shrink_steps;
          break;
        }
      }
    }
    outcome.passed = false;
    outcome.counterexample = value;
    outcome.message = *failure;
    return outcome;
  }
  return outcome;
}

// Merge property instance: an existing pool (lock flag per goal), an
// inferred pool size and an op list against them.
struct MergeCase {
  std::vector<bool> locked;
  std::size_t inferred = 0;
  std::vector<MergeOperation> ops;
};

MergeCase generate_merge_case(std::mt19937_64& rng);
std::vector<MergeCase> shrink_merge_case(const MergeCase& c);
std::string describe_merge_case(const MergeCase& c);
// Checks conservation, double consumption, keep synthesis, lock safety and
// lineage acyclicity. Returns a failure description or nullopt.
std::optional<std::string> check_merge_case(const MergeCase& c);

// Grounding case: the fragment is either cut from the source and perturbed
// in case and whitespace, or built so it cannot occur.
struct GroundingCase {
  std::string source;
  std::string fragment;
  bool planted = false;
};

GroundingCase generate_grounding_case(std::mt19937_64& rng);
std::vector<GroundingCase> shrink_grounding_case(const GroundingCase& c);
std::optional<std::string> check_grounding_case(const GroundingCase& c);

// Similarity instance: sentences spread over messages with scripted
// embeddings, some duplicated to force ties.
struct SimilarityCase {
  std::vector<Sentence> sentences;
  ScriptedMock backend;
  std::size_t k = 5;
  std::size_t m = 2;
};

SimilarityCase generate_similarity_case(std::mt19937_64& rng, std::size_t max_sentences = 50);
// Compares the library against brute-force enumeration. nullopt when equal.
std::optional<std::string> check_similarity_case(const SimilarityCase& c);

}  // namespace testing_support
