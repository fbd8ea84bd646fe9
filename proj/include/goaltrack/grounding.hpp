#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "goaltrack/types.hpp"

namespace goaltrack {

// Matching normal form: ASCII case-folded, whitespace runs collapsed to one
// space, leading and trailing whitespace/punctuation removed.
std::string normalize_for_match(std::string_view text);

// First range of `source` whose slice equals `fragment` under
// normalize_for_match. The range indexes the original bytes of `source`.
// Throws PreconditionViolation on an empty fragment.
std::optional<CharRange> ground_span(std::string_view source, std::string_view fragment);

}  // namespace goaltrack
