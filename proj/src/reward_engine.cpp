#include "mtrz/reward_engine.hpp"

#include <cmath>
#include <stdexcept>

namespace mtrz {

std::string_view to_string(MetricMode mode) {
  switch (mode) {
    case MetricMode::Lex:
      return "lex";
    case MetricMode::Sem:
      return "sem";
    case MetricMode::Mix:
      return "mix";
  }
  return "unknown";
}

MetricMode parse_metric_mode(std::string_view text) {
  if (text == "lex") {
    return MetricMode::Lex;
  }
  if (text == "sem") {
    return MetricMode::Sem;
  }
  if (text == "mix") {
    return MetricMode::Mix;
  }
  throw std::invalid_argument("reward_mode: expected lex, sem or mix, got '" + std::string(text) + "'");
}

LexicalMetric bleu_metric(TokenizeMode mode) {
  return [mode](std::string_view trans, std::string_view ref) {
    return normalize(sentence_bleu(tokenize(trans, mode), tokenize(ref, mode)));
  };
}

LexicalMetric chrf_metric() {
  return [](std::string_view trans, std::string_view ref) { return normalize(chrf(trans, ref)); };
}

namespace {

double checked_unit(double value, std::string_view what) {
  if (!std::isfinite(value) || value < 0.0 || value > 1.0) {
    throw std::out_of_range(std::string(what) + " score outside [0, 1]");
  }
  return value;
}

}  // namespace

MetricScore metric_components(const ParsedResponse& parsed, const PromptInstance& instance, RewardMode mode,
                              const LexicalMetric& lex, SemanticScorer* sem) {
  if (!parsed.format_ok) {
    throw std::invalid_argument("metric_score: response format is not correct");
  }
  const bool needs_lex = mode.metric != MetricMode::Sem;
  const bool needs_sem = mode.metric != MetricMode::Lex;
  if (needs_lex && !instance.ref_text) {
    throw std::invalid_argument("ref_text: reference required for reward mode " + std::string(to_string(mode.metric)));
  }
  if (needs_sem && sem == nullptr) {
    throw std::invalid_argument("semantic scorer required for reward mode " + std::string(to_string(mode.metric)));
  }

  MetricScore out;
  if (needs_lex) {
    out.lex = checked_unit(lex(parsed.translate_text, *instance.ref_text), "lexical");
    out.value += *out.lex;
  }
  if (needs_sem) {
    out.sem = checked_unit(sem->score({instance.src_text, parsed.translate_text, instance.ref_text}), "semantic");
    out.value += *out.sem;
  }
  return out;
}

double metric_score(const ParsedResponse& parsed, const PromptInstance& instance, RewardMode mode,
                    const LexicalMetric& lex, SemanticScorer* sem) {
  return metric_components(parsed, instance, mode, lex, sem).value;
}

RewardBreakdown final_reward(const ParsedResponse& parsed, const PromptInstance& instance, RewardMode mode,
                             const LexicalMetric& lex, SemanticScorer* sem, double format_penalty) {
  RewardBreakdown out;
  out.mode = mode;
  out.s_format = format_score(parsed);
  if (out.s_format == -1) {
    out.r = static_cast<double>(out.s_format) - format_penalty;
    return out;
  }
  const auto metric = metric_components(parsed, instance, mode, lex, sem);
  out.s_metric = metric.value;
  out.lex = metric.lex;
  out.sem = metric.sem;
  out.r = static_cast<double>(out.s_format) + metric.value;
  return out;
}

RewardEngine::RewardEngine(RewardMode mode, LexicalMetric lex, SemanticScorer* sem, double format_penalty)
    : mode_(mode), lex_(std::move(lex)), sem_(sem), format_penalty_(format_penalty) {
  if (!(format_penalty_ >= 0.0) || !std::isfinite(format_penalty_)) {
    throw std::invalid_argument("format_penalty: must be finite and nonnegative");
  }
  if (mode_.metric != MetricMode::Lex && sem_ == nullptr) {
    throw std::invalid_argument("scorer: reward mode " + std::string(to_string(mode_.metric)) +
                                " needs a semantic scorer");
  }
}

RewardBreakdown RewardEngine::score(const PromptInstance& instance, std::string_view raw_response) const {
  return score(instance, parse_response(raw_response, mode_.thinking_required));
}

RewardBreakdown RewardEngine::score(const PromptInstance& instance, const ParsedResponse& parsed) const {
  return final_reward(parsed, instance, mode_, lex_, sem_, format_penalty_);
}

}  // namespace mtrz
