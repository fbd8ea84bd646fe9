#include "goaltrack/grounding.hpp"

#include <cctype>
#include <vector>

#include "goaltrack/error.hpp"

namespace goaltrack {
namespace {

bool is_space(unsigned char c) { return std::isspace(c) != 0; }
bool is_edge_trim(unsigned char c) { return std::isspace(c) || std::ispunct(c); }

// Case-folds and collapses whitespace; origin[i] is the source range that
// produced output byte i.
std::string fold(std::string_view text, std::vector<CharRange>* origin) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (is_space(c)) {
      std::size_t j = i;
      while (j < text.size() && is_space(static_cast<unsigned char>(text[j]))) ++j;
      out.push_back(' ');
      if (origin) origin->push_back({i, j});
      i = j;
    } else {
      out.push_back(static_cast<char>(std::tolower(c)));
      if (origin) origin->push_back({i, i + 1});
      ++i;
    }
  }
  return out;
}

}  // namespace

std::string normalize_for_match(std::string_view text) {
  std::size_t b = 0;
  std::size_t e = text.size();
  while (b < e && is_edge_trim(static_cast<unsigned char>(text[b]))) ++b;
  while (e > b && is_edge_trim(static_cast<unsigned char>(text[e - 1]))) --e;
  return fold(text.substr(b, e - b), nullptr);
}

std::optional<CharRange> ground_span(std::string_view source, std::string_view fragment) {
  if (fragment.empty()) {
    throw Error(ErrorCode::PreconditionViolation, "grounding fragment is empty");
  }
  const std::string needle = normalize_for_match(fragment);
  if (needle.empty()) return std::nullopt;
  std::vector<CharRange> origin;
  const std::string haystack = fold(source, &origin);
  const auto pos = haystack.find(needle);
  if (pos == std::string::npos) return std::nullopt;
  return CharRange{origin[pos].begin, origin[pos + needle.size() - 1].end};
}

}  // namespace goaltrack
