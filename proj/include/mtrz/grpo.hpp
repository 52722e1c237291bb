#pragma once

#include <span>
#include <vector>

#include "mtrz/autodiff.hpp"

namespace mtrz {

// (r - mean) / std with the population std; all zeros when every reward is equal.
std::vector<double> compute_advantages(std::span<const double> rewards);

// exp(d) - d - 1 with d = logp_ref - logp_theta. Throws NumericalError when d > 50.
double kl_approx(double logp_ref, double logp_theta);

enum class TokenAggregation {
  SequenceMean,  // mean over tokens of each output, then mean over the group
  Pooled,        // mean over every token of the group
};

struct LossConfig {
  double clip_eps = 0.2;
  double kl_beta = 0.0;
  TokenAggregation aggregation = TokenAggregation::SequenceMean;
};

// Differentiable log-probabilities of one rollout group, aligned token for token.
struct GroupLogprobs {
  std::vector<double> advantages;
  std::vector<std::vector<ad::Var>> theta;
  std::vector<std::vector<double>> old_logp;
  std::vector<std::vector<double>> ref_logp;  // may be empty when kl_beta == 0
};

// -J averaged over groups. Per token: rho = exp(logp_theta - logp_old) and
// surrogate = min(rho * A, clip(rho, 1 - eps, 1 + eps) * A). The KL term is the
// mean of kl_approx over every token in the batch, weighted by kl_beta.
// `group_count` >= groups.size() lets callers omit groups whose contribution is
// identically zero while keeping the same normaliser.
ad::Var grpo_loss(ad::Tape& tape, std::span<const GroupLogprobs> groups, const LossConfig& config,
                  std::size_t group_count = 0);

}  // namespace mtrz
