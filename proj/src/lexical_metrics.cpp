#include "mtrz/lexical_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_map>

#include "mtrz/utf8.hpp"

namespace mtrz {

namespace {

using NGramCounts = std::unordered_map<std::uint64_t, std::int64_t>;

// Packs up to four 16-bit token ids into one key; the order is folded in so that
// n-grams of different length never collide.
std::array<NGramCounts, kBleuMaxOrder> count_ngrams(const std::vector<std::uint32_t>& ids) {
  std::array<NGramCounts, kBleuMaxOrder> counts;
  for (int n = 1; n <= kBleuMaxOrder; ++n) {
    const auto order = static_cast<std::size_t>(n);
    for (std::size_t i = 0; i + order <= ids.size(); ++i) {
      std::uint64_t key = 0;
      for (std::size_t k = 0; k < order; ++k) {
        key = (key << 16U) | ids[i + k];
      }
      ++counts[order - 1][key];
    }
  }
  return counts;
}

// sacreBLEU floors log(0) to this constant.
double floored_log(double x) { return x == 0.0 ? -9999999999.0 : std::log(x); }

double bleu_score(const BleuStats& stats, bool smooth, bool effective_order) {
  if (stats.hyp_len == 0) {
    return 0.0;
  }
  double bp = 1.0;
  if (stats.hyp_len < stats.ref_len) {
    bp = std::exp(1.0 - (static_cast<double>(stats.ref_len) / static_cast<double>(stats.hyp_len)));
  }
  const bool any_match = std::any_of(stats.ngrams.begin(), stats.ngrams.end(),
                                     [](const NGramStats& s) { return s.matched > 0; });
  if (!any_match) {
    return 0.0;
  }

  std::array<double, kBleuMaxOrder> precisions{};
  double smooth_factor = 1.0;
  int used_orders = kBleuMaxOrder;
  for (int n = 0; n < kBleuMaxOrder; ++n) {
    const auto& s = stats.ngrams[static_cast<std::size_t>(n)];
    if (s.total == 0) {
      break;
    }
    if (effective_order) {
      used_orders = n + 1;
    }
    if (s.matched == 0) {
      if (smooth) {
        smooth_factor *= 2.0;
        precisions[static_cast<std::size_t>(n)] = 100.0 / (smooth_factor * static_cast<double>(s.total));
      }
    } else {
      precisions[static_cast<std::size_t>(n)] =
          100.0 * static_cast<double>(s.matched) / static_cast<double>(s.total);
    }
  }
  double log_sum = 0.0;
  for (int n = 0; n < used_orders; ++n) {
    log_sum += floored_log(precisions[static_cast<std::size_t>(n)]);
  }
  const double score = bp * std::exp(log_sum / used_orders);
  return std::clamp(score, 0.0, 100.0);
}

std::array<std::unordered_map<std::u32string, std::int64_t>, kChrfOrder> char_ngrams(std::string_view text) {
  std::u32string chars;
  for (const char32_t c : utf8::decode(text)) {
    if (!utf8::is_space(c)) {
      chars.push_back(c);
    }
  }
  std::array<std::unordered_map<std::u32string, std::int64_t>, kChrfOrder> counts;
  for (std::size_t n = 1; n <= static_cast<std::size_t>(kChrfOrder); ++n) {
    for (std::size_t i = 0; i + n <= chars.size(); ++i) {
      ++counts[n - 1][chars.substr(i, n)];
    }
  }
  return counts;
}

}  // namespace

TokenSequence tokenize(std::string_view text, TokenizeMode mode) {
  TokenSequence tokens;
  std::vector<char32_t> current;
  const auto flush = [&] {
    if (!current.empty()) {
      tokens.push_back(utf8::encode(current));
      current.clear();
    }
  };
  for (const char32_t c : utf8::decode(text)) {
    if (utf8::is_space(c)) {
      flush();
    } else if (mode == TokenizeMode::Char || utf8::is_punct(c)) {
      flush();
      tokens.push_back(utf8::encode(c));
    } else {
      current.push_back(c);
    }
  }
  flush();
  return tokens;
}

BleuStats& BleuStats::operator+=(const BleuStats& other) {
  for (std::size_t n = 0; n < ngrams.size(); ++n) {
    ngrams[n].matched += other.ngrams[n].matched;
    ngrams[n].total += other.ngrams[n].total;
  }
  hyp_len += other.hyp_len;
  ref_len += other.ref_len;
  return *this;
}

BleuStats bleu_statistics(const TokenSequence& hyp, const TokenSequence& ref) {
  if (ref.empty()) {
    throw std::invalid_argument("bleu: empty reference");
  }
  std::unordered_map<std::string_view, std::uint32_t> ids;
  const auto to_ids = [&](const TokenSequence& tokens) {
    std::vector<std::uint32_t> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) {
      const auto [it, inserted] = ids.try_emplace(t, static_cast<std::uint32_t>(ids.size() + 1));
      out.push_back(it->second);
    }
    return out;
  };
  const auto hyp_ids = to_ids(hyp);
  const auto ref_ids = to_ids(ref);
  if (ids.size() >= 0xFFFFU) {
    throw std::invalid_argument("bleu: too many distinct tokens in one pair");
  }
  const auto hyp_counts = count_ngrams(hyp_ids);
  const auto ref_counts = count_ngrams(ref_ids);

  BleuStats stats;
  stats.hyp_len = static_cast<std::int64_t>(hyp.size());
  stats.ref_len = static_cast<std::int64_t>(ref.size());
  for (std::size_t n = 0; n < static_cast<std::size_t>(kBleuMaxOrder); ++n) {
    auto& s = stats.ngrams[n];
    s.order = static_cast<int>(n) + 1;
    s.total = std::max<std::int64_t>(0, stats.hyp_len - static_cast<std::int64_t>(n));
    for (const auto& [key, count] : hyp_counts[n]) {
      const auto it = ref_counts[n].find(key);
      if (it != ref_counts[n].end()) {
        s.matched += std::min(count, it->second);
      }
    }
  }
  return stats;
}

double sentence_bleu(const TokenSequence& hyp, const TokenSequence& ref) {
  return bleu_score(bleu_statistics(hyp, ref), /*smooth=*/true, /*effective_order=*/true);
}

double corpus_bleu(std::span<const BleuStats> stats) {
  if (stats.empty()) {
    throw std::invalid_argument("corpus_bleu: empty corpus");
  }
  BleuStats total;
  for (const auto& s : stats) {
    total += s;
  }
  return bleu_score(total, /*smooth=*/false, /*effective_order=*/false);
}

double corpus_bleu(std::span<const std::pair<TokenSequence, TokenSequence>> pairs) {
  std::vector<BleuStats> stats;
  stats.reserve(pairs.size());
  for (const auto& [hyp, ref] : pairs) {
    stats.push_back(bleu_statistics(hyp, ref));
  }
  return corpus_bleu(stats);
}

ChrfStats& ChrfStats::operator+=(const ChrfStats& other) {
  for (std::size_t n = 0; n < counts.size(); ++n) {
    for (std::size_t k = 0; k < 3; ++k) {
      counts[n][k] += other.counts[n][k];
    }
  }
  return *this;
}

ChrfStats chrf_statistics(std::string_view hyp, std::string_view ref) {
  if (utf8::is_blank(ref)) {
    throw std::invalid_argument("chrf: empty reference");
  }
  const auto hyp_counts = char_ngrams(hyp);
  const auto ref_counts = char_ngrams(ref);
  ChrfStats stats;
  for (std::size_t n = 0; n < static_cast<std::size_t>(kChrfOrder); ++n) {
    auto& c = stats.counts[n];
    // Hypothesis n-grams only count when the reference has n-grams of this order.
    for (const auto& [gram, count] : hyp_counts[n]) {
      if (!ref_counts[n].empty()) {
        c[0] += count;
      }
      const auto it = ref_counts[n].find(gram);
      if (it != ref_counts[n].end()) {
        c[2] += std::min(count, it->second);
      }
    }
    for (const auto& [gram, count] : ref_counts[n]) {
      c[1] += count;
    }
  }
  return stats;
}

double chrf_from_statistics(const ChrfStats& stats) {
  const double factor = kChrfBeta * kChrfBeta;
  double avg_prec = 0.0;
  double avg_rec = 0.0;
  int effective_order = 0;
  for (const auto& c : stats.counts) {
    const auto [n_hyp, n_ref, n_match] = std::tuple{c[0], c[1], c[2]};
    if (n_hyp > 0 && n_ref > 0) {
      avg_prec += static_cast<double>(n_match) / static_cast<double>(n_hyp);
      avg_rec += static_cast<double>(n_match) / static_cast<double>(n_ref);
      ++effective_order;
    }
  }
  if (effective_order == 0) {
    return 0.0;
  }
  avg_prec /= effective_order;
  avg_rec /= effective_order;
  if (avg_prec + avg_rec == 0.0) {
    return 0.0;
  }
  const double score = (1.0 + factor) * avg_prec * avg_rec / ((factor * avg_prec) + avg_rec);
  return std::clamp(100.0 * score, 0.0, 100.0);
}

double chrf(std::string_view hyp, std::string_view ref) { return chrf_from_statistics(chrf_statistics(hyp, ref)); }

double corpus_chrf(std::span<const std::pair<std::string, std::string>> pairs) {
  if (pairs.empty()) {
    throw std::invalid_argument("corpus_chrf: empty corpus");
  }
  ChrfStats total;
  for (const auto& [hyp, ref] : pairs) {
    total += chrf_statistics(hyp, ref);
  }
  return chrf_from_statistics(total);
}

double normalize(double score) {
  if (!(score >= 0.0 && score <= 100.0)) {
    throw std::out_of_range("normalize: score outside [0, 100]");
  }
  return score / 100.0;
}

}  // namespace mtrz
