#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mtrz {

enum class TokenizeMode { Whitespace, Char };

// Tokens never contain whitespace.
using TokenSequence = std::vector<std::string>;

// Whitespace mode splits on unicode whitespace runs and emits every punctuation
// character as a standalone token. Char mode emits one token per non-whitespace
// code point.
TokenSequence tokenize(std::string_view text, TokenizeMode mode = TokenizeMode::Whitespace);

inline constexpr int kBleuMaxOrder = 4;

struct NGramStats {
  int order = 1;
  std::int64_t matched = 0;  // clipped
  std::int64_t total = 0;    // hypothesis n-grams
};

struct BleuStats {
  std::array<NGramStats, kBleuMaxOrder> ngrams{};
  std::int64_t hyp_len = 0;
  std::int64_t ref_len = 0;

  BleuStats& operator+=(const BleuStats& other);
};

BleuStats bleu_statistics(const TokenSequence& hyp, const TokenSequence& ref);

// Sentence BLEU in [0, 100] with exponential smoothing and effective order.
double sentence_bleu(const TokenSequence& hyp, const TokenSequence& ref);

// Corpus BLEU in [0, 100]: statistics summed over pairs, no smoothing.
double corpus_bleu(std::span<const std::pair<TokenSequence, TokenSequence>> pairs);
double corpus_bleu(std::span<const BleuStats> stats);

inline constexpr int kChrfOrder = 6;
inline constexpr double kChrfBeta = 2.0;

struct ChrfStats {
  // Per order: hypothesis n-grams, reference n-grams, matches.
  std::array<std::array<std::int64_t, 3>, kChrfOrder> counts{};

  ChrfStats& operator+=(const ChrfStats& other);
};

ChrfStats chrf_statistics(std::string_view hyp, std::string_view ref);
double chrf_from_statistics(const ChrfStats& stats);

// Character n-gram F-score (orders 1..6, beta 2) on whitespace-stripped text.
double chrf(std::string_view hyp, std::string_view ref);
double corpus_chrf(std::span<const std::pair<std::string, std::string>> pairs);

// Maps a [0, 100] score to [0, 1].
double normalize(double score);

}  // namespace mtrz
