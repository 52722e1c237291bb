#pragma once

#include <functional>
#include <vector>

#include "mtrz/autodiff.hpp"
#include "mtrz/grpo.hpp"
#include "mtrz/policy_model.hpp"

namespace mtrz::testing {

using LossBuilder = std::function<ad::Var(ad::Tape&, PolicyParams&)>;

struct GradientCheck {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
};

// Central differences (step h) on every parameter against accumulate_gradients.
// Relative error is |a - n| / max(|a|, |n|, floor).
GradientCheck check_gradients(PolicyParams& params, const LossBuilder& build, double h = 1e-4, double floor = 1e-4);

// Small random policy whose weights are large enough to give non-uniform outputs.
PolicyParams random_policy(std::size_t vocab, std::size_t width, std::uint64_t seed, double scale = 0.5);

// Straight transcription of the recurrence with explicit concatenation; shares no
// code with the library forward pass.
std::vector<double> naive_logprobs(const PolicyParams& params, const std::vector<TokenId>& prompt,
                                   const std::vector<TokenId>& output, double temperature);

// Term-by-term evaluation of -J for a batch of groups, for plain doubles.
struct PlainGroup {
  std::vector<double> advantages;
  std::vector<std::vector<double>> theta;
  std::vector<std::vector<double>> old_logp;
  std::vector<std::vector<double>> ref_logp;
};
double brute_force_loss(const std::vector<PlainGroup>& groups, double clip_eps, double beta);

// The three loss shapes used for gradient checks.
ad::Var quadratic_loss(ad::Tape& tape, PolicyParams& params);
LossBuilder nll_loss(std::size_t vocab, std::uint64_t seed);
// Two prompts, two rollouts each; old and reference logprobs are offset from the
// current ones so ratios differ from 1 and the KL term is active.
LossBuilder grpo_micro_batch_loss(const PolicyParams& params, std::uint64_t seed);

// Random prompt [BOS, a, b, source...] and a response shaped like the protocol.
std::vector<TokenId> random_prompt(std::size_t vocab, std::size_t source_len, std::uint64_t seed);
std::vector<TokenId> random_output(std::size_t vocab, std::size_t len, std::uint64_t seed);

}  // namespace mtrz::testing
