#include "goaltrack/text_analysis.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <set>

#include "goaltrack/grounding.hpp"

namespace goaltrack {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, 17> kAbbreviations{
    "e.g.", "i.e.", "dr.",  "mr.", "mrs.", "ms.", "vs.",  "prof.", "st.",
    "jr.",  "sr.",  "fig.", "no.", "cf.",  "inc.", "ltd.", "approx."};

bool space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

bool meaningful(std::string_view s) {
  return std::any_of(s.begin(), s.end(), [](char c) {
    const auto u = static_cast<unsigned char>(c);
    return u >= 0x80 || std::isalnum(u);
  });
}

// Length of a list marker or heading prefix at the start of `line`, spaces
// after it included; 0 if there is none.
std::size_t marker_length(std::string_view line) {
  std::size_t i = 0;
  if (line.empty()) return 0;
  if (line[0] == '#') {
    while (i < line.size() && line[i] == '#') ++i;
  } else if (line[0] == '-' || line[0] == '*' || line[0] == '+' || line[0] == '>') {
    i = 1;
  } else if (line.substr(0, 3) == "\xE2\x80\xA2") {  // bullet
    i = 3;
  } else if (std::isdigit(static_cast<unsigned char>(line[0]))) {
    while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
    if (i >= line.size() || (line[i] != '.' && line[i] != ')')) return 0;
    ++i;
  } else {
    return 0;
  }
  if (i < line.size() && !space(line[i])) return 0;
  while (i < line.size() && space(line[i])) ++i;
  return i;
}

bool is_abbreviation(std::string_view sentence_so_far) {
  auto start = sentence_so_far.find_last_of(" \t(\"'");
  std::string token(start == std::string_view::npos ? sentence_so_far
                                                     : sentence_so_far.substr(start + 1));
  for (auto& c : token) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return std::find(kAbbreviations.begin(), kAbbreviations.end(), token) != kAbbreviations.end();
}

// Scores are compared at a 1e-12 resolution so that mathematically equal
// similarities tie and fall back to index order.
long long score_key(double score) { return std::llround(score * 1e12); }

bool closer(char c) { return c == '"' || c == '\'' || c == ')' || c == ']'; }

}  // namespace

std::vector<Sentence> split_sentences(const MessageId& message, std::string_view text) {
  std::vector<Sentence> out;
  auto emit = [&](std::size_t b, std::size_t e) {
    while (b < e && space(text[b])) ++b;
    while (e > b && space(text[e - 1])) --e;
    if (b < e && meaningful(text.substr(b, e - b))) {
      out.push_back({message, out.size(), {b, e}, std::string(text.substr(b, e - b))});
    }
  };

  std::size_t line_start = 0;
  while (line_start <= text.size()) {
    std::size_t line_end = text.find('\n', line_start);
    if (line_end == std::string_view::npos) line_end = text.size();
    std::size_t pos = line_start;
    while (pos < line_end && space(text[pos])) ++pos;
    pos += marker_length(text.substr(pos, line_end - pos));

    std::size_t start = pos;
    std::size_t i = pos;
    while (i < line_end) {
      const char c = text[i];
      if (c != '.' && c != '!' && c != '?') {
        ++i;
        continue;
      }
      std::size_t j = i;
      while (j < line_end && (text[j] == '.' || text[j] == '!' || text[j] == '?')) ++j;
      const bool single_period = (j - i == 1 && c == '.');
      while (j < line_end && closer(text[j])) ++j;
      const bool at_gap = j == line_end || space(text[j]);
      if (at_gap && !(single_period && is_abbreviation(text.substr(start, i + 1 - start)))) {
        emit(start, j);
        start = j;
      }
      i = j;
    }
    emit(start, line_end);
    if (line_end == text.size()) break;
    line_start = line_end + 1;
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<EmbeddingVector> EmbeddingCache::get(const Backend& backend,
                                                 const std::vector<std::string>& texts) {
  std::vector<std::string> missing;
  {
    std::lock_guard lock(mutex_);
    std::set<std::string> queued;
    for (const auto& t : texts) {
      if (!entries_.count(t) && queued.insert(t).second) missing.push_back(t);
    }
  }
  if (!missing.empty()) {
    auto vectors = embed(backend, missing);
    std::lock_guard lock(mutex_);
    for (std::size_t i = 0; i < missing.size(); ++i) entries_.emplace(missing[i], std::move(vectors[i]));
  }
  std::lock_guard lock(mutex_);
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(entries_.at(t));
  return out;
}

std::size_t EmbeddingCache::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

SimilarityMatrix::SimilarityMatrix(std::vector<Sentence> sentences, std::vector<double> values)
    : sentences_(std::move(sentences)), values_(std::move(values)) {}

SimilarityMatrix similarity_matrix(const std::vector<Sentence>& sentences, const Backend& backend,
                                   EmbeddingCache* cache) {
  if (sentences.empty()) {
    throw Error(ErrorCode::PreconditionViolation, "similarity needs at least one sentence");
  }
  std::vector<std::string> texts;
  texts.reserve(sentences.size());
  for (const auto& s : sentences) texts.push_back(s.text);
  const auto vectors = cache ? cache->get(backend, texts) : embed(backend, texts);

  const std::size_t n = sentences.size();
  std::vector<double> values(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      const double v = std::clamp(vectors[i].dot(vectors[j]), -1.0, 1.0);
      values[i * n + j] = v;
      values[j * n + i] = v;
    }
  }
  return SimilarityMatrix(sentences, std::move(values));
}

std::vector<SimilarPair> top_similar_pairs(const SimilarityMatrix& matrix, std::size_t k) {
  std::vector<SimilarPair> pairs;
  const auto& sentences = matrix.sentences();
  for (std::size_t i = 0; i < matrix.size(); ++i) {
    for (std::size_t j = i + 1; j < matrix.size(); ++j) {
      if (sentences[i].message != sentences[j].message) pairs.push_back({i, j, matrix.at(i, j)});
    }
  }
  const std::size_t count = std::min(k, pairs.size());
  std::partial_sort(pairs.begin(), pairs.begin() + static_cast<std::ptrdiff_t>(count), pairs.end(),
                    [](const SimilarPair& a, const SimilarPair& b) {
                      if (score_key(a.score) != score_key(b.score)) {
                        return score_key(a.score) > score_key(b.score);
                      }
                      return std::pair(a.first, a.second) < std::pair(b.first, b.second);
                    });
  pairs.resize(count);
  return pairs;
}

std::vector<UniqueSentence> unique_sentences(const SimilarityMatrix& matrix, std::size_t m) {
  const std::size_t n = matrix.size();
  if (n < 2) {
    throw Error(ErrorCode::InsufficientSentences, "unique sentences need at least two sentences");
  }
  std::vector<UniqueSentence> means;
  means.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    // Summed in sorted order so sentences with identical rows tie exactly.
    std::vector<double> others;
    others.reserve(n - 1);
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) others.push_back(matrix.at(i, j));
    }
    std::sort(others.begin(), others.end());
    double sum = 0.0;
    for (double v : others) sum += v;
    means.push_back({i, sum / static_cast<double>(n - 1)});
  }
  std::stable_sort(means.begin(), means.end(), [](const UniqueSentence& a, const UniqueSentence& b) {
    return score_key(a.mean_similarity) < score_key(b.mean_similarity);
  });
  means.resize(std::min(m, n));
  return means;
}

// ---------------------------------------------------------------------------

void mark_shared(std::vector<KeyPhrase>& phrases) {
  std::map<std::string, std::set<std::string>> messages_by_phrase;
  for (const auto& p : phrases) {
    messages_by_phrase[normalize_for_match(p.text)].insert(p.message.value);
  }
  for (auto& p : phrases) p.shared = messages_by_phrase[normalize_for_match(p.text)].size() >= 2;
}

std::vector<KeyPhrase> extract_keyphrases(const std::vector<Response>& responses,
                                          const Backend& backend, const PromptCatalog& prompts) {
  if (responses.empty()) {
    throw Error(ErrorCode::PreconditionViolation, "keyphrase extraction needs a response");
  }
  const std::string prompt = prompts.render(PromptStage::Keyphrase);
  std::vector<KeyPhrase> phrases;
  for (const auto& response : responses) {
    const json reply = complete_structured(
        backend, {{Role::System, prompt}, {Role::User, response.text}},
        CallContext{"keyphrase", response.turn});
    if (!reply.is_object() || !reply.contains("keyphrases") || !reply["keyphrases"].is_array()) {
      throw Error(ErrorCode::MalformedOutput, "keyphrase reply lacks a \"keyphrases\" array")
          .with_raw(reply.dump());
    }
    for (const auto& item : reply["keyphrases"]) {
      if (!item.is_string() || normalize_for_match(item.get<std::string>()).empty()) continue;
      KeyPhrase phrase;
      phrase.message = response.message;
      phrase.text = item.get<std::string>();
      phrase.span = ground_span(response.text, phrase.text);
      phrase.grounded = phrase.span.has_value();
      phrases.push_back(std::move(phrase));
    }
  }
  mark_shared(phrases);
  return phrases;
}

// ---------------------------------------------------------------------------

std::string_view highlight_kind_name(const HighlightKind& kind) {
  struct Visitor {
    std::string_view operator()(const EvalExampleMark&) const { return "eval_example"; }
    std::string_view operator()(const KeyPhraseMark&) const { return "key_phrase"; }
    std::string_view operator()(const SimilarPairMark&) const { return "similar_pair"; }
    std::string_view operator()(const UniqueSentenceMark&) const { return "unique_sentence"; }
  };
  return std::visit(Visitor{}, kind);
}

std::vector<HighlightSpan> evaluation_highlights(const std::vector<Evaluation>& evaluations,
                                                 const MessageId& message) {
  std::vector<HighlightSpan> spans;
  for (const auto& e : evaluations) {
    if (e.message != message) continue;
    for (const auto& example : e.examples) {
      if (example.grounded && example.span) {
        spans.push_back({message, *example.span, EvalExampleMark{e.category, e.goal}});
      }
    }
  }
  return spans;
}

std::vector<HighlightSpan> keyphrase_highlights(const std::vector<KeyPhrase>& phrases) {
  std::vector<HighlightSpan> spans;
  for (const auto& p : phrases) {
    if (p.grounded && p.span) spans.push_back({p.message, *p.span, KeyPhraseMark{p.shared}});
  }
  return spans;
}

std::vector<HighlightSpan> similar_pair_highlights(const SimilarityMatrix& matrix,
                                                   const std::vector<SimilarPair>& pairs) {
  std::vector<HighlightSpan> spans;
  const auto& sentences = matrix.sentences();
  for (std::size_t id = 0; id < pairs.size(); ++id) {
    for (std::size_t index : {pairs[id].first, pairs[id].second}) {
      spans.push_back({sentences[index].message, sentences[index].range,
                       SimilarPairMark{id, pairs[id].score}});
    }
  }
  return spans;
}

std::vector<HighlightSpan> unique_sentence_highlights(const SimilarityMatrix& matrix,
                                                      const std::vector<UniqueSentence>& unique) {
  std::vector<HighlightSpan> spans;
  for (const auto& u : unique) {
    const auto& s = matrix.sentences()[u.sentence];
    spans.push_back({s.message, s.range, UniqueSentenceMark{u.mean_similarity}});
  }
  return spans;
}

}  // namespace goaltrack
