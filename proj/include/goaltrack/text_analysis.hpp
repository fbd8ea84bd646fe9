#pragma once

#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "goaltrack/goal_model.hpp"
#include "goaltrack/llm_backend.hpp"
#include "goaltrack/prompts.hpp"

namespace goaltrack {

struct Sentence {
  MessageId message;
  std::size_t index = 0;  // position within its message
  CharRange range;
  std::string text;

  bool operator==(const Sentence&) const = default;
};

// Boundaries after . ! ? followed by whitespace or end of text, and at every
// newline. Leading list markers and heading hashes are excluded from the
// sentence range; common abbreviations do not end a sentence.
std::vector<Sentence> split_sentences(const MessageId& message, std::string_view text);

// Thread-safe memo of embeddings keyed by exact text.
class EmbeddingCache {
 public:
  std::vector<EmbeddingVector> get(const Backend& backend, const std::vector<std::string>& texts);
  std::size_t size() const;

 private:
  mutable std::mutex mutex_;
  std::map<std::string, EmbeddingVector> entries_;
};

class SimilarityMatrix {
 public:
  SimilarityMatrix() = default;
  SimilarityMatrix(std::vector<Sentence> sentences, std::vector<double> values);

  std::size_t size() const { return sentences_.size(); }
  double at(std::size_t i, std::size_t j) const { return values_[i * sentences_.size() + j]; }
  const std::vector<Sentence>& sentences() const { return sentences_; }

 private:
  std::vector<Sentence> sentences_;
  std::vector<double> values_;  // row-major
};

// entry(i, j) is the dot product of the unit-normalized embeddings.
SimilarityMatrix similarity_matrix(const std::vector<Sentence>& sentences, const Backend& backend,
                                   EmbeddingCache* cache = nullptr);

struct SimilarPair {
  std::size_t first = 0;  // sentence indices into the matrix, first < second
  std::size_t second = 0;
  double score = 0.0;

  bool operator==(const SimilarPair&) const = default;
};

// Highest-scoring pairs whose sentences come from different messages,
// descending by score, ties by (first, second).
std::vector<SimilarPair> top_similar_pairs(const SimilarityMatrix& matrix, std::size_t k);

struct UniqueSentence {
  std::size_t sentence = 0;
  double mean_similarity = 0.0;

  bool operator==(const UniqueSentence&) const = default;
};

// The m sentences with the lowest mean similarity to every other sentence,
// ascending, ties by sentence order. Throws InsufficientSentences below two.
std::vector<UniqueSentence> unique_sentences(const SimilarityMatrix& matrix, std::size_t m);

struct KeyPhrase {
  MessageId message;
  std::string text;
  std::optional<CharRange> span;
  bool grounded = false;
  bool shared = false;

  bool operator==(const KeyPhrase&) const = default;
};

struct Response {
  MessageId message;
  int turn = 0;
  std::string text;
};

// One keyphrase call per response; `shared` marks phrases that occur, under
// normalization, in at least two different responses.
std::vector<KeyPhrase> extract_keyphrases(const std::vector<Response>& responses,
                                          const Backend& backend, const PromptCatalog& prompts);

// Marks phrases shared between responses. Exposed for callers that already
// have phrases.
void mark_shared(std::vector<KeyPhrase>& phrases);

struct EvalExampleMark {
  EvaluationCategory category = EvaluationCategory::Ignore;
  GoalId goal;
  bool operator==(const EvalExampleMark&) const = default;
};
struct KeyPhraseMark {
  bool shared = false;
  bool operator==(const KeyPhraseMark&) const = default;
};
struct SimilarPairMark {
  std::size_t pair_id = 0;
  double score = 0.0;
  bool operator==(const SimilarPairMark&) const = default;
};
struct UniqueSentenceMark {
  double mean_similarity = 0.0;
  bool operator==(const UniqueSentenceMark&) const = default;
};

using HighlightKind = std::variant<EvalExampleMark, KeyPhraseMark, SimilarPairMark, UniqueSentenceMark>;

struct HighlightSpan {
  MessageId message;
  CharRange range;
  HighlightKind kind;

  bool operator==(const HighlightSpan&) const = default;
};

std::string_view highlight_kind_name(const HighlightKind& kind);

std::vector<HighlightSpan> evaluation_highlights(const std::vector<Evaluation>& evaluations,
                                                 const MessageId& message);
std::vector<HighlightSpan> keyphrase_highlights(const std::vector<KeyPhrase>& phrases);
std::vector<HighlightSpan> similar_pair_highlights(const SimilarityMatrix& matrix,
                                                   const std::vector<SimilarPair>& pairs);
std::vector<HighlightSpan> unique_sentence_highlights(const SimilarityMatrix& matrix,
                                                      const std::vector<UniqueSentence>& unique);

}  // namespace goaltrack
