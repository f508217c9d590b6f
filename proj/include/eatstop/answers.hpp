#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace eatstop {

inline std::string_view trim(std::string_view s) {
  constexpr std::string_view ws = " \t\r\n\f\v";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

// Content of the last balanced \boxed{...} span, if any.
inline std::optional<std::string> last_boxed_content(std::string_view text) {
  constexpr std::string_view tag = "\\boxed{";
  std::optional<std::string> found;
  std::size_t pos = 0;
  while ((pos = text.find(tag, pos)) != std::string_view::npos) {
    const std::size_t open = pos + tag.size();
    int depth = 1;
    std::size_t i = open;
    for (; i < text.size() && depth > 0; ++i) {
      if (text[i] == '{') ++depth;
      else if (text[i] == '}') --depth;
    }
    if (depth == 0) found = std::string(text.substr(open, i - 1 - open));
    pos = open;
  }
  return found;
}

/// String-level answer canonicalization: last boxed content if present,
/// otherwise the whole text; surrounding whitespace trimmed. No
/// mathematical equivalence is attempted ("1/2" and "0.5" stay distinct).
inline std::string normalize_answer(std::string_view text) {
  if (auto boxed = last_boxed_content(text)) return std::string(trim(*boxed));
  return std::string(trim(text));
}

}  // namespace eatstop
