#include "mtrz/vocabulary.hpp"

#include <array>
#include <stdexcept>

#include "mtrz/prompt_protocol.hpp"
#include "mtrz/utf8.hpp"

namespace mtrz {

namespace {

constexpr std::array<std::string_view, kReservedTokens> kReserved{
    "<pad>", "<s>", "</s>", "<unk>", kThinkOpen, kThinkClose, kTranslateOpen, kTranslateClose};

}  // namespace

Vocabulary::Vocabulary(std::span<const std::string> tokens) {
  for (const auto r : kReserved) {
    index_.emplace(std::string(r), static_cast<TokenId>(tokens_.size()));
    tokens_.emplace_back(r);
  }
  for (const auto& t : tokens) {
    if (t.empty()) {
      throw std::invalid_argument("vocabulary: empty token");
    }
    for (const char32_t c : utf8::decode(t)) {
      if (utf8::is_space(c)) {
        throw std::invalid_argument("vocabulary: token contains whitespace: '" + t + "'");
      }
    }
    if (index_.try_emplace(t, static_cast<TokenId>(tokens_.size())).second) {
      tokens_.push_back(t);
    }
  }
  if (tokens_.size() > kMaxVocabSize) {
    throw std::invalid_argument("vocabulary: " + std::to_string(tokens_.size()) + " tokens exceed the limit of " +
                                std::to_string(kMaxVocabSize));
  }
}

TokenId Vocabulary::id(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const { return index_.contains(std::string(token)); }

std::uint64_t Vocabulary::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : tokens_) {
    for (const char c : t) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
    h ^= static_cast<unsigned char>('\n');
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<TokenId> Vocabulary::encode(std::string_view text) const {
  std::vector<TokenId> out;
  std::string word;
  const auto flush = [&] {
    if (!word.empty()) {
      out.push_back(id(word));
      word.clear();
    }
  };
  std::size_t i = 0;
  while (i < text.size()) {
    bool tag = false;
    if (text[i] == '<') {
      for (TokenId t = kThinkOpenId; t <= kTranslateCloseId; ++t) {
        const auto& literal = tokens_[t];
        if (text.substr(i, literal.size()) == literal) {
          flush();
          out.push_back(t);
          i += literal.size();
          tag = true;
          break;
        }
      }
    }
    if (tag) {
      continue;
    }
    const auto c = static_cast<unsigned char>(text[i]);
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
      flush();
    } else {
      word.push_back(text[i]);
    }
    ++i;
  }
  flush();
  return out;
}

std::string Vocabulary::decode(std::span<const TokenId> ids) const {
  std::string out;
  bool previous_word = false;
  for (const TokenId t : ids) {
    if (t == kEos) {
      break;
    }
    if (is_tag(t)) {
      out += tokens_.at(t);
      previous_word = false;
      continue;
    }
    if (previous_word) {
      out.push_back(' ');
    }
    out += tokens_.at(t);
    previous_word = true;
  }
  return out;
}

}  // namespace mtrz
