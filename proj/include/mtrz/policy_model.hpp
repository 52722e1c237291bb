#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtrz/autodiff.hpp"
#include "mtrz/prompt_protocol.hpp"
#include "mtrz/vocabulary.hpp"

namespace mtrz {

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Weights of a single-layer gated recurrent policy:
//
//   x_t = E[o_{t-1}]
//   z = sigmoid(Wz [x; h] + bz),  r = sigmoid(Wr [x; h] + br)
//   c = tanh(Wc [x; r*h] + bc),   h' = h + z * (c - h)
//   logits = Wo [h'; a_t] + bo
//
// a_t is the alignment context: zero until a <translate> tag has been emitted,
// then the embedding of the source token at the cursor (number of tokens emitted
// since the most recent <translate>), or E[EOS] once the cursor passes the end of
// the source.
class PolicyParams {
 public:
  PolicyParams(std::size_t vocab_size, std::size_t width);

  // Uniform(-0.08, 0.08) embeddings and weight matrices, zero biases.
  static PolicyParams initialized(std::size_t vocab_size, std::size_t width, std::uint64_t seed);

  std::size_t vocab_size() const { return vocab_size_; }
  std::size_t width() const { return width_; }

  // Declared order: embedding, update_w, update_b, reset_w, reset_b, candidate_w,
  // candidate_b, output_w, output_b.
  std::vector<ad::ParamBlock>& blocks() { return blocks_; }
  const std::vector<ad::ParamBlock>& blocks() const { return blocks_; }

  ad::ParamBlock& embedding() { return blocks_[0]; }
  ad::ParamBlock& update_w() { return blocks_[1]; }
  ad::ParamBlock& update_b() { return blocks_[2]; }
  ad::ParamBlock& reset_w() { return blocks_[3]; }
  ad::ParamBlock& reset_b() { return blocks_[4]; }
  ad::ParamBlock& candidate_w() { return blocks_[5]; }
  ad::ParamBlock& candidate_b() { return blocks_[6]; }
  ad::ParamBlock& output_w() { return blocks_[7]; }
  ad::ParamBlock& output_b() { return blocks_[8]; }
  const ad::ParamBlock& block(std::size_t i) const { return blocks_.at(i); }

  std::size_t parameter_count() const;
  void zero_grad();
  // Euclidean distance over all parameter values.
  double l2_distance(const PolicyParams& other) const;

 private:
  std::size_t vocab_size_;
  std::size_t width_;
  std::vector<ad::ParamBlock> blocks_;
};

inline constexpr std::size_t kPromptHeader = 3;

// [BOS, src_lang, tgt_lang, source tokens...]; unknown strings map to UNK.
std::vector<TokenId> encode_prompt(const PromptInstance& instance, const Vocabulary& vocab);

struct Trajectory {
  std::vector<TokenId> prompt_tokens;
  std::vector<TokenId> output_tokens;  // ends with EOS unless the length cap was hit
  std::vector<double> logprobs;        // aligned with output_tokens

  bool operator==(const Trajectory&) const = default;
};

// softmax(logits / temperature) for the token after `prefix`.
std::vector<double> next_token_distribution(const PolicyParams& params, std::span<const TokenId> prompt,
                                            std::span<const TokenId> prefix, double temperature);

// Ancestral sampling; stops after EOS or max_len tokens.
Trajectory sample_response(const PolicyParams& params, std::span<const TokenId> prompt, double temperature,
                           std::size_t max_len, std::uint64_t rng_seed);

// Greedy decoding (argmax, ties to the lowest id); logprobs at temperature 1.
Trajectory greedy_response(const PolicyParams& params, std::span<const TokenId> prompt, std::size_t max_len);

// Teacher-forced per-token log-probabilities.
std::vector<double> sequence_logprobs(const PolicyParams& params, std::span<const TokenId> prompt,
                                      std::span<const TokenId> output, double temperature);

// Differentiable counterparts. The prompt state can be shared by every output
// sampled for the same prompt.
ad::Var encode_prompt_state(ad::Tape& tape, PolicyParams& params, std::span<const TokenId> prompt);
std::vector<ad::Var> sequence_logprob_vars(ad::Tape& tape, PolicyParams& params, std::span<const TokenId> prompt,
                                           ad::Var prompt_state, std::span<const TokenId> output, double temperature);

// Runs backward from `loss` and adds d(loss)/d(theta) into the gradient buffers.
// Throws NumericalError naming the first block with a non-finite gradient.
void accumulate_gradients(PolicyParams& params, ad::Tape& tape, ad::Var loss);

}  // namespace mtrz
