#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace mtrz {

// Protocol tag literals. Byte-exact and case-sensitive.
inline constexpr std::string_view kThinkOpen = "<think>";
inline constexpr std::string_view kThinkClose = "</think>";
inline constexpr std::string_view kTranslateOpen = "<translate>";
inline constexpr std::string_view kTranslateClose = "</translate>";

struct PromptInstance {
  std::string src_lang;
  std::string tgt_lang;
  std::string src_text;
  std::optional<std::string> ref_text;

  bool operator==(const PromptInstance&) const = default;
};

// Throws std::invalid_argument naming the violated field.
void validate(const PromptInstance& instance);

std::string render_prompt(const PromptInstance& instance);

struct ParsedResponse {
  std::string think_text;
  std::string translate_text;
  bool format_ok = false;
  std::size_t raw_len_tokens = 0;

  bool operator==(const ParsedResponse&) const = default;
};

// Strict single-pass grammar. With thinking required the trimmed response must be
// exactly <think>..</think> followed (up to whitespace) by <translate>..</translate>.
// Without thinking the leading think block becomes optional. Tag literals inside a
// block, duplicated blocks and any other non-whitespace text are rejected.
ParsedResponse parse_response(std::string_view raw, bool thinking_required = true);

// Tags count as one token each; other text is split on whitespace.
std::size_t count_protocol_tokens(std::string_view raw);

int format_score(const ParsedResponse& parsed);

}  // namespace mtrz
