#include "support.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "goaltrack/grounding.hpp"
#include "goaltrack/serialization.hpp"

namespace testing_support {

using nlohmann::json;

std::filesystem::path data_path(const std::string& name) {
  return std::filesystem::path(GOALTRACK_TEST_DATA) / name;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

json load_json(const std::string& name) { return json::parse(read_file(data_path(name))); }

ScriptedMock study_mock() { return ScriptedMock::load(data_path("study_mock.json")); }

SessionConfig study_config() { return SessionConfig::from_json(load_json("study_config.json")); }

std::vector<std::string> study_messages() {
  std::vector<std::string> out;
  std::istringstream in(read_file(data_path("study_transcript.jsonl")));
  std::string line;
  while (std::getline(in, line)) {
    auto j = json::parse(line);
    if (j["kind"] == "message" && j["role"] == "user") out.push_back(j["text"]);
  }
  return out;
}

void run_study(Session& session, const Backend& backend, int turns) {
  const auto messages = study_messages();
  const auto prompts = PromptCatalog::builtin();
  for (int t = 1; t <= turns; ++t) {
    session.append_turn(run_turn(session.state(), messages[t - 1], {backend, backend}, prompts));
    if (t == 2) {
      ControlAction complete;
      complete.kind = ControlKind::Complete;
      complete.goal = GoalId{7};
      session.append_control(complete);
    }
  }
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < length; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

ScriptedMock mock_from(const json& script, int max_retries) {
  return ScriptedMock::from_json(script, max_retries);
}

void FailingBackend::stream_chat(const std::vector<ChatMessage>& messages, const CallContext& context,
                                 const ChunkSink& sink) const {
  if (failing_.count(context.key()) || failing_.count(context.stage)) {
    throw Error(code_, "injected failure for " + context.key());
  }
  inner_.stream_chat(messages, context, sink);
}

void FlakyLog::append(const std::vector<StoredEvent>& events) {
  if (*broken_) throw Error(ErrorCode::StorageFailure, "injected storage failure");
  inner_.append(events);
}

TempDir::TempDir() {
  static int counter = 0;
  path = std::filesystem::temp_directory_path() /
         ("goaltrack-test-" + std::to_string(::getpid()) + "-" + std::to_string(++counter));
  std::filesystem::remove_all(path);
  std::filesystem::create_directories(path);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path, ec);
}

// ---------------------------------------------------------------------------
// merge algebra

namespace {

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

GoalLedger ledger_for(const MergeCase& c, std::vector<GoalId>& existing) {
  GoalLedger ledger;
  existing.clear();
  for (std::size_t i = 0; i < c.locked.size(); ++i) {
    const Goal& g = ledger.create_goal("existing goal " + std::to_string(i + 1), GoalType::Request,
                                       PreloadedOrigin{}, 0);
    existing.push_back(g.id);
    if (c.locked[i]) ledger.lock_goal(g.id);
  }
  return ledger;
}

std::vector<InferredGoal> inferred_for(const MergeCase& c) {
  std::vector<InferredGoal> out;
  for (std::size_t i = 0; i < c.inferred; ++i) {
    out.push_back({"inferred goal " + std::to_string(i + 1),
                   i % 2 ? GoalType::Question : GoalType::Suggestion,
                   InferredOrigin{1, MessageId::user(1), std::nullopt}});
  }
  return out;
}

}  // namespace

MergeCase generate_merge_case(std::mt19937_64& rng) {
  MergeCase c;
  const std::size_t existing = pick(rng, 0, 6);
  c.inferred = pick(rng, 0, 6);
  for (std::size_t i = 0; i < existing; ++i) c.locked.push_back(pick(rng, 0, 3) == 0);
  // Mostly valid op lists built from disjoint references, with occasional
  // invalid ones to exercise validation.
  std::vector<std::size_t> old_free(existing), new_free(c.inferred);
  for (std::size_t i = 0; i < existing; ++i) old_free[i] = i + 1;
  for (std::size_t i = 0; i < c.inferred; ++i) new_free[i] = i + 1;
  std::shuffle(old_free.begin(), old_free.end(), rng);
  std::shuffle(new_free.begin(), new_free.end(), rng);
  const std::size_t count = pick(rng, 0, existing + c.inferred);
  for (std::size_t k = 0; k < count; ++k) {
    const auto roll = pick(rng, 0, 99);
    MergeOperation op;
    if (roll < 4) {
      // out of range
      op.kind = OpKind::Keep;
      op.consumed = {{roll % 2 ? Pool::Existing : Pool::Inferred,
                      (roll % 2 ? existing : c.inferred) + 1 + pick(rng, 0, 2)}};
    } else if (roll < 8 && existing && c.inferred) {
      // possibly reuses a reference
      op.kind = OpKind::Combine;
      op.consumed = {{Pool::Existing, pick(rng, 1, existing)}, {Pool::Inferred, pick(rng, 1, c.inferred)}};
    } else if (roll < 50 && !old_free.empty() && !new_free.empty()) {
      op.kind = roll % 2 ? OpKind::Combine : OpKind::Replace;
      op.consumed = {{Pool::Existing, old_free.back()}, {Pool::Inferred, new_free.back()}};
      if (roll % 3 == 0) std::swap(op.consumed[0], op.consumed[1]);
      old_free.pop_back();
      new_free.pop_back();
      op.updated_text = roll % 5 == 0 ? "" : "merged " + std::to_string(k);
    } else if (!old_free.empty() && (roll % 2 || new_free.empty())) {
      op.kind = OpKind::Keep;
      op.consumed = {{Pool::Existing, old_free.back()}};
      old_free.pop_back();
    } else if (!new_free.empty()) {
      op.kind = OpKind::Keep;
      op.consumed = {{Pool::Inferred, new_free.back()}};
      new_free.pop_back();
    } else {
      continue;
    }
    c.ops.push_back(op);
  }
  return c;
}

std::vector<MergeCase> shrink_merge_case(const MergeCase& c) {
  std::vector<MergeCase> out;
  for (std::size_t i = 0; i < c.ops.size(); ++i) {
    MergeCase smaller = c;
    smaller.ops.erase(smaller.ops.begin() + static_cast<std::ptrdiff_t>(i));
    out.push_back(smaller);
  }
  for (std::size_t i = 0; i < c.locked.size(); ++i) {
    if (c.locked[i]) {
      MergeCase smaller = c;
      smaller.locked[i] = false;
      out.push_back(smaller);
    }
  }
  // Remove one unreferenced pool member and renumber the refs above it.
  auto referenced = [&](Pool pool, std::size_t index) {
    for (const auto& op : c.ops)
      for (const auto& ref : op.consumed)
        if (ref.pool == pool && ref.index == index) return true;
    return false;
  };
  auto without = [&](Pool pool, std::size_t index) {
    MergeCase smaller = c;
    if (pool == Pool::Existing) {
      smaller.locked.erase(smaller.locked.begin() + static_cast<std::ptrdiff_t>(index - 1));
    } else {
      --smaller.inferred;
    }
    for (auto& op : smaller.ops)
      for (auto& ref : op.consumed)
        if (ref.pool == pool && ref.index > index) --ref.index;
    return smaller;
  };
  for (std::size_t i = 1; i <= c.locked.size(); ++i) {
    if (!referenced(Pool::Existing, i)) out.push_back(without(Pool::Existing, i));
  }
  for (std::size_t i = 1; i <= c.inferred; ++i) {
    if (!referenced(Pool::Inferred, i)) out.push_back(without(Pool::Inferred, i));
  }
  return out;
}

std::string describe_merge_case(const MergeCase& c) {
  std::ostringstream out;
  out << "existing=[";
  for (std::size_t i = 0; i < c.locked.size(); ++i) out << (i ? "," : "") << (c.locked[i] ? "L" : "U");
  out << "] inferred=" << c.inferred << " ops=" << json(c.ops).dump();
  return out.str();
}

std::optional<std::string> check_merge_case(const MergeCase& c) {
  std::vector<GoalId> existing;
  GoalLedger ledger = ledger_for(c, existing);
  const auto inferred = inferred_for(c);
  const GoalLedger before = ledger;

  // Expected validity, computed independently of the implementation.
  std::optional<ErrorCode> expected_error;
  std::vector<bool> dropped(c.ops.size(), false);
  for (std::size_t k = 0; k < c.ops.size() && !expected_error; ++k) {
    const auto& op = c.ops[k];
    for (const auto& ref : op.consumed) {
      const std::size_t bound = ref.pool == Pool::Existing ? c.locked.size() : c.inferred;
      if (ref.index < 1 || ref.index > bound) expected_error = ErrorCode::IndexOutOfRange;
    }
    if (expected_error) break;
    for (const auto& ref : op.consumed) {
      if (ref.pool == Pool::Existing && c.locked[ref.index - 1]) dropped[k] = true;
    }
  }
  if (!expected_error) {
    std::set<std::pair<int, std::size_t>> seen;
    for (std::size_t k = 0; k < c.ops.size(); ++k) {
      if (dropped[k]) continue;
      for (const auto& ref : c.ops[k].consumed) {
        if (!seen.insert({static_cast<int>(ref.pool), ref.index}).second) {
          expected_error = ErrorCode::DoubleConsumption;
        }
      }
    }
  }

  MergeResult result;
  try {
    result = ledger.apply_merge(existing, inferred, c.ops, 1);
  } catch (const Error& e) {
    if (!expected_error) return "unexpected " + std::string(to_string(e.code())) + ": " + e.what();
    if (e.code() != *expected_error) {
      return "expected " + std::string(to_string(*expected_error)) + ", got " +
             std::string(to_string(e.code()));
    }
    if (!(ledger == before)) return "ledger changed by a rejected merge";
    return std::nullopt;
  }
  if (expected_error) return "expected " + std::string(to_string(*expected_error)) + ", merge succeeded";

  // dropped ops are exactly those touching a locked goal
  std::size_t expected_dropped = std::count(dropped.begin(), dropped.end(), true);
  if (result.dropped.size() != expected_dropped) return "dropped-op count mismatch";
  std::size_t drop_events = 0;
  for (const auto& e : result.events) drop_events += e.kind == EventKind::OpDropped;
  if (drop_events != expected_dropped) return "dropped-op events mismatch";

  // conservation: every unlocked existing goal and every inferred goal in exactly one applied op
  std::map<std::pair<int, std::size_t>, int> uses;
  std::size_t arity = 0;
  for (const auto& op : result.applied) {
    arity += op.consumed.size();
    if (op.kind == OpKind::Keep && op.consumed.size() != 1) return "keep with wrong arity";
    if (op.kind != OpKind::Keep && op.consumed.size() != 2) return "pair op with wrong arity";
    for (const auto& ref : op.consumed) ++uses[{static_cast<int>(ref.pool), ref.index}];
  }
  std::size_t members = 0;
  for (std::size_t i = 0; i < c.locked.size(); ++i) {
    const int n = uses[{static_cast<int>(Pool::Existing), i + 1}];
    if (c.locked[i] && n != 0) return "locked goal consumed by an applied op";
    if (!c.locked[i] && n != 1) return "existing goal " + std::to_string(i + 1) + " used " + std::to_string(n) + " times";
    members += !c.locked[i];
  }
  for (std::size_t i = 0; i < c.inferred; ++i) {
    const int n = uses[{static_cast<int>(Pool::Inferred), i + 1}];
    if (n != 1) return "inferred goal " + std::to_string(i + 1) + " used " + std::to_string(n) + " times";
    ++members;
  }
  if (arity != members) return "conservation: arity sum differs from consumed count";

  // keep synthesis: applied = undropped given ops followed by keeps
  std::size_t given = 0;
  for (std::size_t k = 0; k < c.ops.size(); ++k) {
    if (dropped[k]) continue;
    if (!(result.applied[given].kind == c.ops[k].kind && result.applied[given].consumed == c.ops[k].consumed)) {
      return "applied op order differs from input";
    }
    ++given;
  }
  for (std::size_t k = given; k < result.applied.size(); ++k) {
    if (result.applied[k].kind != OpKind::Keep) return "synthesized op is not a keep";
  }

  // lock safety
  for (std::size_t i = 0; i < c.locked.size(); ++i) {
    const Goal& g = ledger.goal(existing[i]);
    if (c.locked[i] && (g.superseded_by || !g.active())) return "locked goal superseded";
  }
  // lineage acyclicity and single successors
  for (const auto& g : ledger.goals()) {
    std::set<GoalId> visited{g.id};
    const Goal* cur = &g;
    while (cur->superseded_by) {
      if (!visited.insert(*cur->superseded_by).second) return "lineage cycle at " + g.id.str();
      cur = &ledger.goal(*cur->superseded_by);
    }
    int successors = 0;
    for (const auto& other : ledger.goals()) {
      successors += std::count(other.parents.begin(), other.parents.end(), g.id);
    }
    if (g.superseded_by && successors != 1) return g.id.str() + " has " + std::to_string(successors) + " successors";
  }
  // active count: locked + (members - pairs)
  std::size_t pairs = 0;
  for (const auto& op : result.applied) pairs += op.kind != OpKind::Keep;
  const std::size_t locked_count = std::count(c.locked.begin(), c.locked.end(), true);
  if (ledger.active_goals().size() != locked_count + members - pairs) return "active goal count mismatch";
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// grounding

namespace {

const std::vector<std::string> kWords = {"the", "quick", "fox", "jumps", "over", "lazy", "dog",
                                         "garden", "soil", "a", "tomato", "ladder", "sun"};

bool edge(char c) {
  const auto u = static_cast<unsigned char>(c);
  return std::isspace(u) || std::ispunct(u);
}

std::string random_case(std::mt19937_64& rng, std::string word) {
  for (auto& ch : word) {
    if (pick(rng, 0, 2) == 0) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  }
  return word;
}

std::string random_gap(std::mt19937_64& rng) {
  static const std::vector<std::string> gaps = {" ", " ", " ", "  ", "\t", " \n ", ", ", ". "};
  return gaps[pick(rng, 0, gaps.size() - 1)];
}

// Brute force: earliest begin of a slice with non-trim edges that
// normalizes to the needle.
std::optional<std::size_t> brute_first_begin(const std::string& source, const std::string& needle) {
  for (std::size_t b = 0; b < source.size(); ++b) {
    if (edge(source[b])) continue;
    for (std::size_t e = b + 1; e <= source.size(); ++e) {
      if (edge(source[e - 1])) continue;
      if (normalize_for_match(std::string_view(source).substr(b, e - b)) == needle) return b;
    }
  }
  return std::nullopt;
}

}  // namespace

GroundingCase generate_grounding_case(std::mt19937_64& rng) {
  GroundingCase c;
  const std::size_t n = pick(rng, 1, 9);
  std::vector<std::string> words;
  for (std::size_t i = 0; i < n; ++i) words.push_back(kWords[pick(rng, 0, kWords.size() - 1)]);
  for (std::size_t i = 0; i < n; ++i) {
    if (i) c.source += random_gap(rng);
    c.source += random_case(rng, words[i]);
  }
  if (pick(rng, 0, 1) == 0) c.source += pick(rng, 0, 1) ? "." : "!";
  if (pick(rng, 0, 3) == 0) c.source = "  " + c.source;

  if (pick(rng, 0, 3) != 0) {
    // cut a word range and perturb case, spacing and edge punctuation
    const std::size_t b = pick(rng, 0, n - 1);
    const std::size_t e = pick(rng, b + 1, n);
    std::string frag;
    for (std::size_t i = b; i < e; ++i) {
      if (i > b) frag += std::string(pick(rng, 1, 3), ' ');
      frag += random_case(rng, words[i]);
    }
    if (pick(rng, 0, 2) == 0) frag = "\"" + frag + ".\"";
    if (pick(rng, 0, 2) == 0) frag = " " + frag + "\t";
    // the planted fragment only survives when the cut did not cross punctuation
    c.fragment = frag;
    c.planted = true;
    std::string plain;
    for (std::size_t i = b; i < e; ++i) plain += (i > b ? " " : "") + words[i];
    if (normalize_for_match(c.source).find(plain) == std::string::npos) c.planted = false;
  } else {
    c.fragment = random_case(rng, kWords[pick(rng, 0, kWords.size() - 1)]) + " zebra";
  }
  return c;
}

std::vector<GroundingCase> shrink_grounding_case(const GroundingCase& c) {
  std::vector<GroundingCase> out;
  if (c.source.size() > 1) {
    out.push_back({c.source.substr(1), c.fragment, false});
    out.push_back({c.source.substr(0, c.source.size() - 1), c.fragment, false});
  }
  if (c.fragment.size() > 1) {
    out.push_back({c.source, c.fragment.substr(1), false});
    out.push_back({c.source, c.fragment.substr(0, c.fragment.size() - 1), false});
  }
  return out;
}

std::optional<std::string> check_grounding_case(const GroundingCase& c) {
  const std::string needle = normalize_for_match(c.fragment);
  const auto span = ground_span(c.source, c.fragment);
  const auto brute = needle.empty() ? std::nullopt : brute_first_begin(c.source, needle);
  if (span) {
    if (span->end > c.source.size() || span->begin >= span->end) return "span out of bounds";
    if (normalize_for_match(span->slice(c.source)) != needle) return "span does not re-normalize to the fragment";
    if (!brute || *brute != span->begin) return "span is not the first match";
  } else if (brute) {
    return "match exists at " + std::to_string(*brute) + " but none returned";
  }
  if (c.planted && !span) return "planted fragment not found";
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// similarity

SimilarityCase generate_similarity_case(std::mt19937_64& rng, std::size_t max_sentences) {
  SimilarityCase c;
  const std::size_t count = pick(rng, 2, max_sentences);
  const std::size_t messages = pick(rng, 1, 5);
  const std::size_t dim = pick(rng, 2, 6);
  std::map<std::string, std::vector<double>> table;
  std::vector<std::string> texts;
  std::normal_distribution<double> normal;
  for (std::size_t i = 0; i < count; ++i) {
    std::string text;
    if (!texts.empty() && pick(rng, 0, 4) == 0) {
      text = texts[pick(rng, 0, texts.size() - 1)];  // duplicate: forces exact ties
    } else {
      text = "sentence " + std::to_string(i) + ".";
      std::vector<double> v(dim);
      do {
        for (auto& x : v) x = pick(rng, 0, 2) ? normal(rng) : static_cast<double>(pick(rng, 0, 4)) - 2.0;
      } while (std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; }));
      table[text] = v;
    }
    texts.push_back(text);
  }
  std::vector<std::size_t> per_message(messages, 0);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t m = pick(rng, 0, messages - 1);
    c.sentences.push_back({MessageId::assistant(static_cast<int>(m + 1)), per_message[m]++,
                           {0, texts[i].size()}, texts[i]});
  }
  c.backend = ScriptedMock({}, table);
  c.k = pick(rng, 0, 12);
  c.m = pick(rng, 0, count + 2);
  return c;
}

namespace {

template <typename T, typename Better>
std::vector<T> select_best(std::vector<T> items, std::size_t count, Better better) {
  std::vector<T> out;
  while (out.size() < count && !items.empty()) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < items.size(); ++i) {
      if (better(items[i], items[best])) best = i;
    }
    out.push_back(items[best]);
    items.erase(items.begin() + static_cast<std::ptrdiff_t>(best));
  }
  return out;
}

}  // namespace

std::optional<std::string> check_similarity_case(const SimilarityCase& c) {
  const std::size_t n = c.sentences.size();
  // independent normalization and dot products
  std::vector<std::vector<double>> unit;
  for (const auto& s : c.sentences) {
    auto raw = c.backend.embed_raw({s.text}).front();
    double norm = 0;
    for (double x : raw) norm += x * x;
    norm = std::sqrt(norm);
    for (double& x : raw) x /= norm;
    unit.push_back(raw);
  }
  std::vector<std::vector<double>> expected(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double d = 0;
      for (std::size_t k = 0; k < unit[i].size(); ++k) d += unit[i][k] * unit[j][k];
      expected[i][j] = std::clamp(d, -1.0, 1.0);
    }

  const auto matrix = similarity_matrix(c.sentences, c.backend);
  if (matrix.size() != n) return "matrix size mismatch";
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (std::abs(matrix.at(i, j) - expected[i][j]) > 1e-9) {
        return "entry (" + std::to_string(i) + "," + std::to_string(j) + ") differs";
      }
      if (matrix.at(i, j) != matrix.at(j, i)) return "matrix not symmetric";
    }

  // Ties are scores equal at 1e-12 resolution.
  auto key = [](double s) { return std::llround(s * 1e12); };
  struct Pair { std::size_t i, j; double s; };
  std::vector<Pair> pairs;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (c.sentences[i].message != c.sentences[j].message) pairs.push_back({i, j, expected[i][j]});
  pairs = select_best(pairs, c.k, [&](const Pair& a, const Pair& b) {
    if (key(a.s) != key(b.s)) return key(a.s) > key(b.s);
    return std::tie(a.i, a.j) < std::tie(b.i, b.j);
  });
  const auto top = top_similar_pairs(matrix, c.k);
  if (top.size() != pairs.size()) return "top pair count differs";
  for (std::size_t p = 0; p < top.size(); ++p) {
    if (top[p].first != pairs[p].i || top[p].second != pairs[p].j) {
      return "top pair " + std::to_string(p) + " ordering differs";
    }
    if (std::abs(top[p].score - pairs[p].s) > 1e-9) return "top pair score differs";
  }

  struct Mean { std::size_t i; double mean; };
  std::vector<Mean> means;
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) sum += expected[i][j];
    means.push_back({i, sum / static_cast<double>(n - 1)});
  }
  means = select_best(means, c.m, [&](const Mean& a, const Mean& b) {
    if (key(a.mean) != key(b.mean)) return key(a.mean) < key(b.mean);
    return a.i < b.i;
  });
  const auto unique = unique_sentences(matrix, c.m);
  if (unique.size() != means.size()) return "unique count differs";
  for (std::size_t p = 0; p < unique.size(); ++p) {
    if (unique[p].sentence != means[p].i) return "unique ordering differs at " + std::to_string(p);
    if (std::abs(unique[p].mean_similarity - means[p].mean) > 1e-9) return "unique mean differs";
  }
  return std::nullopt;
}

}  // namespace testing_support
