#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mtrz {

using TokenId = std::uint32_t;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr TokenId kThinkOpenId = 4;
inline constexpr TokenId kThinkCloseId = 5;
inline constexpr TokenId kTranslateOpenId = 6;
inline constexpr TokenId kTranslateCloseId = 7;
inline constexpr std::size_t kReservedTokens = 8;
inline constexpr std::size_t kMaxVocabSize = 256;

// Fixed specials and protocol tags at ids 0..7, followed by the caller's tokens in
// first-seen order (duplicates ignored).
class Vocabulary {
 public:
  explicit Vocabulary(std::span<const std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(TokenId id) const { return tokens_.at(id); }
  // kUnk for unknown strings.
  TokenId id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  // FNV-1a over the newline-joined token list.
  std::uint64_t hash() const;

  // Protocol tags become atomic tokens; remaining text is split on whitespace.
  std::vector<TokenId> encode(std::string_view text) const;
  // Inverse of encode up to whitespace: adjacent non-tag tokens are separated by a
  // single space and tags are glued to their neighbours. Stops at the first EOS.
  std::string decode(std::span<const TokenId> ids) const;

  static bool is_tag(TokenId id) { return id >= kThinkOpenId && id <= kTranslateCloseId; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

}  // namespace mtrz
