#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mtrz/prompt_protocol.hpp"
#include "mtrz/semantic_scorer.hpp"
#include "mtrz/vocabulary.hpp"

namespace mtrz {

enum class ReorderRule { Identity, SwapAdjacent, Reverse };

std::string_view to_string(ReorderRule rule);
ReorderRule parse_reorder_rule(std::string_view text);

// Target position i holds source position permutation[i].
std::vector<std::size_t> reorder_permutation(ReorderRule rule, std::size_t length);

// Concept i is written "s{i}" in the source language and "t{i}a", "t{i}b", ... in
// the target language; the first synonym is canonical.
struct LanguageSpec {
  std::size_t concepts = 50;
  std::size_t synonyms = 2;
  ReorderRule reorder = ReorderRule::Identity;
  std::string src_lang = "Synth-Src";
  std::string tgt_lang = "Synth-Tgt";

  void validate() const;
  std::string source_token(std::size_t concept_index) const;
  std::string target_token(std::size_t concept_index, std::size_t synonym) const;
  SynonymLexicon lexicon() const;
  // Language names, source tokens, then target tokens.
  std::vector<std::string> vocabulary_tokens() const;
  std::uint64_t hash() const;
};

struct Corpus {
  std::vector<PromptInstance> train;
  std::vector<PromptInstance> test;
  std::uint64_t spec_hash = 0;

  bool operator==(const Corpus&) const = default;
};

// Number of distinct sentences with lengths in [min_len, max_len], saturating.
std::uint64_t sentence_space(std::size_t concepts, std::size_t min_len, std::size_t max_len);

Corpus generate_corpus(const LanguageSpec& spec, std::size_t n_train, std::size_t n_test, std::size_t min_len,
                       std::size_t max_len, std::uint64_t seed);

enum class FileFormat { Tsv, Jsonl };

FileFormat parse_file_format(std::string_view text);
// jsonl for *.jsonl / *.json, tsv otherwise.
FileFormat infer_file_format(const std::filesystem::path& path);

struct LoadOptions {
  FileFormat format = FileFormat::Jsonl;
  std::size_t min_chars = 30;
  // Used for TSV lines and JSONL objects without language keys.
  std::string src_lang = "Source";
  std::string tgt_lang = "Target";
};

struct LoadResult {
  std::vector<PromptInstance> instances;
  std::size_t skipped = 0;   // malformed or blank lines
  std::size_t filtered = 0;  // well-formed but shorter than min_chars
};

// Throws std::runtime_error for an unreadable file or when nothing survives.
LoadResult load_parallel_file(const std::filesystem::path& path, const LoadOptions& options);

// One {"src","ref","src_lang","tgt_lang"} object per line.
void write_jsonl(const std::filesystem::path& path, std::span<const PromptInstance> instances);

// Language names then every whitespace token of sources and references, in
// first-seen order.
Vocabulary build_vocabulary(std::span<const PromptInstance> instances);

// Uniform sampling without replacement: position p of the infinite stream is
// element p % n of the permutation for epoch p / n, seeded by (seed, epoch).
class EpochSampler {
 public:
  EpochSampler(std::size_t corpus_size, std::uint64_t seed);

  std::vector<std::size_t> epoch_order(std::uint64_t epoch) const;
  // Indices for training step `step` (0-based); batches may straddle epochs.
  std::vector<std::size_t> batch(std::uint64_t step, std::size_t batch_size) const;

 private:
  std::size_t size_;
  std::uint64_t seed_;
};

std::vector<PromptInstance> sample_batch(std::span<const PromptInstance> train, const EpochSampler& sampler,
                                         std::uint64_t step, std::size_t batch_size);

}  // namespace mtrz
