#include "mtrz/prompt_protocol.hpp"

#include <array>
#include <stdexcept>
#include <vector>

#include "mtrz/utf8.hpp"

namespace mtrz {

namespace {

constexpr std::string_view kTemplateHead = "A conversation between User and Assistant. The User asks for a translation from ";
constexpr std::string_view kTemplateMid = " to ";
constexpr std::string_view kTemplateTail =
    ", and the Assistant solves it. The Assistant first thinks about the reasoning process in the mind and then "
    "provides the user with the final translation. The reasoning process and final translation are enclosed "
    "within <think> </think> and <translate> </translate> tags, respectively, i.e., <think> reasoning process "
    "here </think><translate> final translation here </translate>.\nUser:";
constexpr std::string_view kTemplateEnd = "\nAssistant:";

enum class Tag { ThinkOpen, ThinkClose, TranslateOpen, TranslateClose };

constexpr std::array<std::pair<Tag, std::string_view>, 4> kTags{{
    {Tag::ThinkOpen, kThinkOpen},
    {Tag::ThinkClose, kThinkClose},
    {Tag::TranslateOpen, kTranslateOpen},
    {Tag::TranslateClose, kTranslateClose},
}};

struct TagHit {
  Tag tag;
  std::size_t begin;
  std::size_t end;
};

std::vector<TagHit> scan_tags(std::string_view raw) {
  std::vector<TagHit> hits;
  std::size_t i = 0;
  while (i < raw.size()) {
    bool matched = false;
    if (raw[i] == '<') {
      for (const auto& [tag, literal] : kTags) {
        if (raw.substr(i, literal.size()) == literal) {
          hits.push_back({tag, i, i + literal.size()});
          i += literal.size();
          matched = true;
          break;
        }
      }
    }
    if (!matched) {
      ++i;
    }
  }
  return hits;
}

bool blank_between(std::string_view raw, std::size_t begin, std::size_t end) {
  return utf8::is_blank(raw.substr(begin, end - begin));
}

}  // namespace

void validate(const PromptInstance& instance) {
  if (utf8::is_blank(instance.src_text)) {
    throw std::invalid_argument("src_text: empty source");
  }
  if (instance.src_lang == instance.tgt_lang) {
    throw std::invalid_argument("tgt_lang: must differ from src_lang");
  }
  if (instance.ref_text && utf8::is_blank(*instance.ref_text)) {
    throw std::invalid_argument("ref_text: empty reference");
  }
}

std::string render_prompt(const PromptInstance& instance) {
  validate(instance);
  std::string out;
  out.reserve(kTemplateHead.size() + kTemplateTail.size() + instance.src_text.size() + 64);
  out += kTemplateHead;
  out += instance.src_lang;
  out += kTemplateMid;
  out += instance.tgt_lang;
  out += kTemplateTail;
  out += instance.src_text;
  out += kTemplateEnd;
  return out;
}

std::size_t count_protocol_tokens(std::string_view raw) {
  std::size_t count = 0;
  std::size_t cursor = 0;
  const auto count_words = [&](std::size_t begin, std::size_t end) {
    bool in_word = false;
    for (const char32_t c : utf8::decode(raw.substr(begin, end - begin))) {
      if (utf8::is_space(c)) {
        in_word = false;
      } else if (!in_word) {
        in_word = true;
        ++count;
      }
    }
  };
  for (const auto& hit : scan_tags(raw)) {
    count_words(cursor, hit.begin);
    ++count;
    cursor = hit.end;
  }
  count_words(cursor, raw.size());
  return count;
}

ParsedResponse parse_response(std::string_view raw, bool thinking_required) {
  ParsedResponse parsed;
  parsed.raw_len_tokens = count_protocol_tokens(raw);

  const auto hits = scan_tags(raw);
  std::size_t first = 0;
  if (hits.size() == 4) {
    if (hits[0].tag != Tag::ThinkOpen || hits[1].tag != Tag::ThinkClose) {
      return parsed;
    }
    first = 2;
  } else if (hits.size() != 2 || thinking_required) {
    return parsed;
  }
  if (hits[first].tag != Tag::TranslateOpen || hits[first + 1].tag != Tag::TranslateClose) {
    return parsed;
  }
  if (!blank_between(raw, 0, hits[0].begin) || !blank_between(raw, hits.back().end, raw.size())) {
    return parsed;
  }
  if (first == 2 && !blank_between(raw, hits[1].end, hits[2].begin)) {
    return parsed;
  }

  if (first == 2) {
    parsed.think_text = std::string(raw.substr(hits[0].end, hits[1].begin - hits[0].end));
  }
  parsed.translate_text = std::string(raw.substr(hits[first].end, hits[first + 1].begin - hits[first].end));
  parsed.format_ok = true;
  return parsed;
}

int format_score(const ParsedResponse& parsed) { return parsed.format_ok ? 1 : -1; }

}  // namespace mtrz
