#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mtrz/grpo.hpp"
#include "mtrz/optimizer.hpp"
#include "mtrz/policy_model.hpp"
#include "mtrz/reward_engine.hpp"

namespace mtrz {

struct TrainConfig {
  std::size_t group_size = 8;
  std::size_t batch_prompts = 8;
  double learning_rate = 5e-4;
  double clip_eps = 0.2;
  double kl_beta = 0.0;
  double temperature = 1.0;
  std::size_t max_gen_len = 64;
  std::size_t ppo_epochs = 1;
  std::uint64_t seed = 0;
  TokenAggregation aggregation = TokenAggregation::SequenceMean;

  // Throws std::invalid_argument naming the offending field.
  void validate() const;
};

struct RolloutGroup {
  PromptInstance prompt;
  std::vector<Trajectory> trajectories;
  std::vector<RewardBreakdown> breakdowns;
  std::vector<double> rewards;
  std::vector<double> advantages;
};

struct StepMetrics {
  std::uint64_t step = 0;  // 1-based index of the completed update
  double mean_reward = 0.0;
  double format_error_rate = 0.0;
  double mean_response_len_tokens = 0.0;
  double mean_kl = 0.0;
  double loss = 0.0;
  std::optional<double> mean_lex;  // over format-correct rollouts that have the component
  std::optional<double> mean_sem;
  std::optional<double> eval_bleu;
  std::optional<double> eval_sem;
  double wall_ms = 0.0;

  bool operator==(const StepMetrics&) const = default;
};

struct TrainerState {
  PolicyParams policy;
  AdamState adam;
  std::uint64_t step = 0;  // completed updates
};

// Samples G rollouts per prompt from the current policy and scores them. A
// rollout whose semantic scoring fails is resampled once with a fresh seed; a
// second failure propagates the ScorerError.
std::vector<RolloutGroup> collect_rollouts(const PolicyParams& policy, const Vocabulary& vocab,
                                           std::span<const PromptInstance> batch, const RewardEngine& engine,
                                           const TrainConfig& config, std::uint64_t step);

// One GRPO update (ppo_epochs optimizer steps on the same rollouts).
StepMetrics train_step(TrainerState& state, const PolicyParams& ref_policy, const Vocabulary& vocab,
                       std::span<const PromptInstance> batch, const RewardEngine& engine, const TrainConfig& config);

struct EvalOptions {
  double temperature = 0.2;
  bool greedy = false;
  std::uint64_t seed = 0;
  std::size_t max_gen_len = 64;
};

struct EvalReport {
  std::size_t instances = 0;
  double bleu = 0.0;  // corpus BLEU, 0-100; malformed outputs contribute an empty hypothesis
  double chrf = 0.0;  // corpus chrF, 0-100
  std::optional<double> mean_sem;  // malformed outputs score 0
  double format_error_rate = 0.0;
  double mean_response_len_tokens = 0.0;

  bool operator==(const EvalReport&) const = default;
};

EvalReport evaluate(const PolicyParams& policy, const Vocabulary& vocab, std::span<const PromptInstance> test,
                    bool thinking_required, SemanticScorer* scorer, const EvalOptions& options);

// Teacher-forced warm start on synthetic protocol-shaped sequences whose content
// is random target-side tokens. Each sequence is independently corrupted at five
// sites (each tag and the end marker) with probability `corruption`, so a policy
// that fits it emits a well-formed response only occasionally and carries no
// translation knowledge.
struct BasePriorConfig {
  std::size_t steps = 300;
  std::size_t batch = 16;
  double learning_rate = 3e-3;
  double corruption = 0.37;
  std::size_t max_think_tokens = 3;
  std::uint64_t seed = 0;
};

// Returns the mean teacher-forced NLL per token of the final step.
double pretrain_base_prior(PolicyParams& policy, const Vocabulary& vocab, std::span<const PromptInstance> train,
                           const BasePriorConfig& config);

}  // namespace mtrz
