#include "mtrz/task_corpus.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "mtrz/lexical_metrics.hpp"
#include "mtrz/rng.hpp"
#include "mtrz/utf8.hpp"

namespace mtrz {

std::string_view to_string(ReorderRule rule) {
  switch (rule) {
    case ReorderRule::Identity:
      return "identity";
    case ReorderRule::SwapAdjacent:
      return "swap-adjacent";
    case ReorderRule::Reverse:
      return "reverse";
  }
  return "identity";
}

ReorderRule parse_reorder_rule(std::string_view text) {
  if (text == "identity") {
    return ReorderRule::Identity;
  }
  if (text == "swap-adjacent") {
    return ReorderRule::SwapAdjacent;
  }
  if (text == "reverse") {
    return ReorderRule::Reverse;
  }
  throw std::invalid_argument("reorder: expected identity, swap-adjacent or reverse, got '" + std::string(text) + "'");
}

std::vector<std::size_t> reorder_permutation(ReorderRule rule, std::size_t length) {
  std::vector<std::size_t> perm(length);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  switch (rule) {
    case ReorderRule::Identity:
      break;
    case ReorderRule::SwapAdjacent:
      for (std::size_t i = 0; i + 1 < length; i += 2) {
        std::swap(perm[i], perm[i + 1]);
      }
      break;
    case ReorderRule::Reverse:
      std::reverse(perm.begin(), perm.end());
      break;
  }
  return perm;
}

void LanguageSpec::validate() const {
  if (concepts == 0) {
    throw std::invalid_argument("concepts: must be positive");
  }
  if (synonyms == 0 || synonyms > 26) {
    throw std::invalid_argument("synonyms: must lie in [1, 26]");
  }
  if (src_lang.empty() || tgt_lang.empty() || src_lang == tgt_lang) {
    throw std::invalid_argument("language names must be non-empty and distinct");
  }
  if (kReservedTokens + 2 + concepts * (1 + synonyms) > kMaxVocabSize) {
    throw std::invalid_argument("concepts: vocabulary would exceed " + std::to_string(kMaxVocabSize) + " tokens");
  }
}

std::string LanguageSpec::source_token(std::size_t concept_index) const {
  return "s" + std::to_string(concept_index);
}

std::string LanguageSpec::target_token(std::size_t concept_index, std::size_t synonym) const {
  return "t" + std::to_string(concept_index) + static_cast<char>('a' + synonym);
}

SynonymLexicon LanguageSpec::lexicon() const {
  validate();
  SynonymLexicon lex(src_lang, tgt_lang);
  for (std::size_t c = 0; c < concepts; ++c) {
    const std::string id = "c" + std::to_string(c);
    lex.add_source(id, source_token(c));
    for (std::size_t k = 0; k < synonyms; ++k) {
      lex.add_target(id, target_token(c, k));
    }
  }
  return lex;
}

std::vector<std::string> LanguageSpec::vocabulary_tokens() const {
  validate();
  std::vector<std::string> out{src_lang, tgt_lang};
  for (std::size_t c = 0; c < concepts; ++c) {
    out.push_back(source_token(c));
  }
  for (std::size_t c = 0; c < concepts; ++c) {
    for (std::size_t k = 0; k < synonyms; ++k) {
      out.push_back(target_token(c, k));
    }
  }
  return out;
}

std::uint64_t LanguageSpec::hash() const {
  std::uint64_t h = mix_seed(concepts, synonyms, static_cast<std::uint64_t>(reorder));
  for (const auto* s : {&src_lang, &tgt_lang}) {
    for (const char c : *s) {
      h = mix_seed(h, static_cast<unsigned char>(c));
    }
    h = mix_seed(h, 0xFFU);
  }
  return h;
}

std::uint64_t sentence_space(std::size_t concepts, std::size_t min_len, std::size_t max_len) {
  constexpr auto kMax = std::numeric_limits<std::uint64_t>::max();
  std::uint64_t total = 0;
  std::uint64_t power = 1;
  for (std::size_t len = 1; len <= max_len; ++len) {
    if (concepts != 0 && power > kMax / concepts) {
      return kMax;
    }
    power *= concepts;
    if (len >= min_len) {
      if (total > kMax - power) {
        return kMax;
      }
      total += power;
    }
  }
  return total;
}

Corpus generate_corpus(const LanguageSpec& spec, std::size_t n_train, std::size_t n_test, std::size_t min_len,
                       std::size_t max_len, std::uint64_t seed) {
  spec.validate();
  if (min_len < 1) {
    throw std::invalid_argument("min_len: must be at least 1");
  }
  if (max_len < min_len || max_len > 32) {
    throw std::invalid_argument("max_len: must lie in [min_len, 32]");
  }
  const std::uint64_t wanted = static_cast<std::uint64_t>(n_train) + n_test;
  if (wanted > sentence_space(spec.concepts, min_len, max_len)) {
    throw std::invalid_argument("corpus size " + std::to_string(wanted) +
                                " exceeds the number of distinct sentences");
  }

  Rng rng(mix_seed(seed, spec.hash()));
  std::set<std::vector<std::size_t>> seen;
  Corpus corpus;
  corpus.spec_hash = spec.hash();
  while (seen.size() < wanted) {
    const auto len = static_cast<std::size_t>(rng.between(static_cast<std::int64_t>(min_len),
                                                          static_cast<std::int64_t>(max_len)));
    std::vector<std::size_t> concepts(len);
    for (auto& c : concepts) {
      c = static_cast<std::size_t>(rng.below(spec.concepts));
    }
    if (!seen.insert(concepts).second) {
      continue;
    }
    std::string src;
    std::string ref;
    const auto perm = reorder_permutation(spec.reorder, len);
    for (std::size_t i = 0; i < len; ++i) {
      if (i > 0) {
        src += ' ';
        ref += ' ';
      }
      src += spec.source_token(concepts[i]);
      ref += spec.target_token(concepts[perm[i]], 0);
    }
    PromptInstance inst{spec.src_lang, spec.tgt_lang, std::move(src), std::move(ref)};
    (corpus.train.size() < n_train ? corpus.train : corpus.test).push_back(std::move(inst));
  }
  return corpus;
}

FileFormat parse_file_format(std::string_view text) {
  if (text == "tsv") {
    return FileFormat::Tsv;
  }
  if (text == "jsonl") {
    return FileFormat::Jsonl;
  }
  throw std::invalid_argument("format: expected tsv or jsonl, got '" + std::string(text) + "'");
}

FileFormat infer_file_format(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  return (ext == ".jsonl" || ext == ".json") ? FileFormat::Jsonl : FileFormat::Tsv;
}

namespace {

bool valid_utf8(std::string_view text) {
  for (const char32_t c : utf8::decode(text)) {
    if (c == U'\uFFFD') {
      return false;
    }
  }
  return true;
}

std::optional<PromptInstance> parse_line(std::string_view line, const LoadOptions& options) {
  if (!line.empty() && line.back() == '\r') {
    line.remove_suffix(1);
  }
  if (utf8::is_blank(line) || !valid_utf8(line)) {
    return std::nullopt;
  }
  PromptInstance inst{options.src_lang, options.tgt_lang, "", std::nullopt};
  if (options.format == FileFormat::Tsv) {
    const auto tab = line.find('\t');
    if (tab == std::string_view::npos || line.find('\t', tab + 1) != std::string_view::npos) {
      return std::nullopt;
    }
    inst.src_text = utf8::trim(line.substr(0, tab));
    inst.ref_text = utf8::trim(line.substr(tab + 1));
  } else {
    const auto doc = nlohmann::json::parse(line, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) {
      return std::nullopt;
    }
    const auto text_field = [&doc](const char* key) -> std::optional<std::string> {
      const auto it = doc.find(key);
      if (it == doc.end() || !it->is_string()) {
        return std::nullopt;
      }
      return utf8::trim(it->get<std::string>());
    };
    auto src = text_field("src");
    auto ref = text_field("ref");
    if (!src || !ref) {
      return std::nullopt;
    }
    for (const auto* key : {"src_lang", "tgt_lang"}) {
      if (doc.contains(key)) {
        auto value = text_field(key);
        if (!value || value->empty()) {
          return std::nullopt;
        }
        (std::string_view(key) == "src_lang" ? inst.src_lang : inst.tgt_lang) = std::move(*value);
      }
    }
    inst.src_text = std::move(*src);
    inst.ref_text = std::move(*ref);
  }
  if (inst.src_text.empty() || inst.ref_text->empty()) {
    return std::nullopt;
  }
  return inst;
}

}  // namespace

LoadResult load_parallel_file(const std::filesystem::path& path, const LoadOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot read corpus file " + path.string());
  }
  LoadResult result;
  std::string line;
  while (std::getline(in, line)) {
    auto inst = parse_line(line, options);
    if (!inst) {
      ++result.skipped;
      continue;
    }
    if (utf8::length(inst->src_text) < options.min_chars) {
      ++result.filtered;
      continue;
    }
    result.instances.push_back(std::move(*inst));
  }
  if (in.bad()) {
    throw std::runtime_error("error while reading corpus file " + path.string());
  }
  if (result.instances.empty()) {
    throw std::runtime_error("corpus file " + path.string() + " has no usable instances (" +
                             std::to_string(result.skipped) + " malformed, " + std::to_string(result.filtered) +
                             " below min_chars)");
  }
  return result;
}

void write_jsonl(const std::filesystem::path& path, std::span<const PromptInstance> instances) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  for (const auto& inst : instances) {
    nlohmann::ordered_json obj;
    obj["src"] = inst.src_text;
    obj["ref"] = inst.ref_text ? nlohmann::ordered_json(*inst.ref_text) : nlohmann::ordered_json(nullptr);
    obj["src_lang"] = inst.src_lang;
    obj["tgt_lang"] = inst.tgt_lang;
    out << obj.dump() << '\n';
  }
  if (!out) {
    throw std::runtime_error("failed writing " + path.string());
  }
}

Vocabulary build_vocabulary(std::span<const PromptInstance> instances) {
  std::vector<std::string> tokens;
  for (const auto& inst : instances) {
    tokens.push_back(inst.src_lang);
    tokens.push_back(inst.tgt_lang);
  }
  const auto add_words = [&tokens](std::string_view text) {
    for (auto& w : tokenize(text)) {
      tokens.push_back(std::move(w));
    }
  };
  for (const auto& inst : instances) {
    add_words(inst.src_text);
    if (inst.ref_text) {
      add_words(*inst.ref_text);
    }
  }
  return Vocabulary(tokens);
}

EpochSampler::EpochSampler(std::size_t corpus_size, std::uint64_t seed) : size_(corpus_size), seed_(seed) {
  if (corpus_size == 0) {
    throw std::invalid_argument("sampler: empty corpus");
  }
}

std::vector<std::size_t> EpochSampler::epoch_order(std::uint64_t epoch) const {
  std::vector<std::size_t> order(size_);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix_seed(seed_, 0xE90C, epoch));
  rng.shuffle(order);
  return order;
}

std::vector<std::size_t> EpochSampler::batch(std::uint64_t step, std::size_t batch_size) const {
  if (batch_size == 0 || batch_size > size_) {
    throw std::invalid_argument("batch_prompts: must lie in [1, corpus size]");
  }
  std::vector<std::size_t> out;
  out.reserve(batch_size);
  std::uint64_t pos = step * batch_size;
  std::uint64_t cached_epoch = std::numeric_limits<std::uint64_t>::max();
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < batch_size; ++i, ++pos) {
    const std::uint64_t epoch = pos / size_;
    if (epoch != cached_epoch) {
      order = epoch_order(epoch);
      cached_epoch = epoch;
    }
    out.push_back(order[pos % size_]);
  }
  return out;
}

std::vector<PromptInstance> sample_batch(std::span<const PromptInstance> train, const EpochSampler& sampler,
                                         std::uint64_t step, std::size_t batch_size) {
  std::vector<PromptInstance> out;
  for (const auto i : sampler.batch(step, batch_size)) {
    out.push_back(train[i]);
  }
  return out;
}

}  // namespace mtrz
