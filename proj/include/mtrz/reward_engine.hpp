#pragma once

#include <functional>
#include <optional>
#include <string>
#include <string_view>

#include "mtrz/lexical_metrics.hpp"
#include "mtrz/prompt_protocol.hpp"
#include "mtrz/semantic_scorer.hpp"

namespace mtrz {

enum class MetricMode { Lex, Sem, Mix };

struct RewardMode {
  MetricMode metric = MetricMode::Lex;
  bool thinking_required = true;

  bool operator==(const RewardMode&) const = default;
};

std::string_view to_string(MetricMode mode);
MetricMode parse_metric_mode(std::string_view text);

// Normalized lexical score B(trans, ref) in [0, 1].
using LexicalMetric = std::function<double(std::string_view trans, std::string_view ref)>;

LexicalMetric bleu_metric(TokenizeMode mode = TokenizeMode::Whitespace);
LexicalMetric chrf_metric();

inline constexpr double kDefaultFormatPenalty = 2.0;

struct RewardBreakdown {
  int s_format = -1;
  std::optional<double> s_metric;  // absent iff s_format == -1
  double r = 0.0;
  RewardMode mode;
  // Components of s_metric; Mix fills both.
  std::optional<double> lex;
  std::optional<double> sem;
};

struct MetricScore {
  double value = 0.0;
  std::optional<double> lex;
  std::optional<double> sem;
};

// S_metric for a format-correct response. Throws std::invalid_argument when the
// response is not format-correct or a reference is required and missing;
// semantic scorer errors propagate.
MetricScore metric_components(const ParsedResponse& parsed, const PromptInstance& instance, RewardMode mode,
                              const LexicalMetric& lex, SemanticScorer* sem);

double metric_score(const ParsedResponse& parsed, const PromptInstance& instance, RewardMode mode,
                    const LexicalMetric& lex, SemanticScorer* sem);

// r = S_format - penalty when the format is wrong (no metric is evaluated),
// otherwise r = 1 + S_metric.
RewardBreakdown final_reward(const ParsedResponse& parsed, const PromptInstance& instance, RewardMode mode,
                             const LexicalMetric& lex, SemanticScorer* sem, double format_penalty = kDefaultFormatPenalty);

// Bundles a reward configuration with its scorers.
class RewardEngine {
 public:
  RewardEngine(RewardMode mode, LexicalMetric lex, SemanticScorer* sem, double format_penalty = kDefaultFormatPenalty);

  RewardBreakdown score(const PromptInstance& instance, std::string_view raw_response) const;
  RewardBreakdown score(const PromptInstance& instance, const ParsedResponse& parsed) const;

  const RewardMode& mode() const { return mode_; }
  double format_penalty() const { return format_penalty_; }
  // Upper bound of S_metric: 1 for Lex/Sem, 2 for Mix.
  double metric_max() const { return mode_.metric == MetricMode::Mix ? 2.0 : 1.0; }

 private:
  RewardMode mode_;
  LexicalMetric lex_;
  SemanticScorer* sem_;
  double format_penalty_;
};

}  // namespace mtrz
