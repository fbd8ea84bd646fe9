#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>

namespace goaltrack {

// Sequential, ledger-scoped goal identifier. Rendered as "g<n>".
struct GoalId {
  std::uint32_t value = 0;

  std::string str() const { return "g" + std::to_string(value); }
  static std::optional<GoalId> parse(std::string_view text);

  auto operator<=>(const GoalId&) const = default;
};

// Message identifiers are deterministic per turn: "u<turn>" for the user
// prompt and "a<turn>" for the assistant response.
struct MessageId {
  std::string value;

  static MessageId user(int turn) { return {"u" + std::to_string(turn)}; }
  static MessageId assistant(int turn) { return {"a" + std::to_string(turn)}; }

  auto operator<=>(const MessageId&) const = default;
};

// Half-open byte range [begin, end) into a UTF-8 string.
struct CharRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  std::string_view slice(std::string_view text) const {
    return text.substr(begin, end - begin);
  }

  auto operator<=>(const CharRange&) const = default;
};

enum class GoalType { Question, Request, Offer, Suggestion };

enum class EvaluationCategory { Confirm, Contradict, Ignore };

enum class OpKind { Combine, Replace, Keep };

std::string_view to_string(GoalType type);
std::string_view to_string(EvaluationCategory category);
std::string_view to_string(OpKind kind);

// Case-insensitive, surrounding whitespace ignored. nullopt for anything
// outside the fixed variant set.
std::optional<GoalType> parse_goal_type(std::string_view text);
std::optional<EvaluationCategory> parse_category(std::string_view text);
std::optional<OpKind> parse_op_kind(std::string_view text);

}  // namespace goaltrack

template <>
struct std::hash<goaltrack::GoalId> {
  std::size_t operator()(const goaltrack::GoalId& id) const noexcept {
    return std::hash<std::uint32_t>{}(id.value);
  }
};
