#include "mtrz/policy_model.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>

#include "mtrz/rng.hpp"

namespace mtrz {

PolicyParams::PolicyParams(std::size_t vocab_size, std::size_t width) : vocab_size_(vocab_size), width_(width) {
  if (vocab_size < kReservedTokens || vocab_size > kMaxVocabSize) {
    throw std::invalid_argument("policy: vocabulary size out of range");
  }
  if (width == 0) {
    throw std::invalid_argument("model_width: must be positive");
  }
  const std::size_t d = width;
  blocks_.emplace_back("embedding", vocab_size, d);
  blocks_.emplace_back("update_w", d, 2 * d);
  blocks_.emplace_back("update_b", d, 1);
  blocks_.emplace_back("reset_w", d, 2 * d);
  blocks_.emplace_back("reset_b", d, 1);
  blocks_.emplace_back("candidate_w", d, 2 * d);
  blocks_.emplace_back("candidate_b", d, 1);
  blocks_.emplace_back("output_w", vocab_size, 2 * d);
  blocks_.emplace_back("output_b", vocab_size, 1);
}

PolicyParams PolicyParams::initialized(std::size_t vocab_size, std::size_t width, std::uint64_t seed) {
  PolicyParams params(vocab_size, width);
  Rng rng(mix_seed(seed, 0x1417));
  for (auto& block : params.blocks_) {
    if (block.cols == 1) {
      continue;  // biases stay zero
    }
    for (auto& v : block.value) {
      v = rng.uniform(-0.08, 0.08);
    }
  }
  return params;
}

std::size_t PolicyParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& b : blocks_) {
    n += b.size();
  }
  return n;
}

void PolicyParams::zero_grad() {
  for (auto& b : blocks_) {
    b.zero_grad();
  }
}

double PolicyParams::l2_distance(const PolicyParams& other) const {
  if (other.vocab_size_ != vocab_size_ || other.width_ != width_) {
    throw std::invalid_argument("l2_distance: shape mismatch");
  }
  double total = 0.0;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    for (std::size_t i = 0; i < blocks_[b].size(); ++i) {
      const double d = blocks_[b].value[i] - other.blocks_[b].value[i];
      total += d * d;
    }
  }
  return std::sqrt(total);
}

std::vector<TokenId> encode_prompt(const PromptInstance& instance, const Vocabulary& vocab) {
  validate(instance);
  std::vector<TokenId> out{kBos, vocab.id(instance.src_lang), vocab.id(instance.tgt_lang)};
  const auto src = vocab.encode(instance.src_text);
  out.insert(out.end(), src.begin(), src.end());
  return out;
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void check_tokens(std::span<const TokenId> tokens, std::size_t vocab_size, const char* what) {
  for (const TokenId t : tokens) {
    if (t >= vocab_size) {
      throw std::out_of_range(std::string(what) + ": token id " + std::to_string(t) + " out of range");
    }
  }
}

void check_prompt(std::span<const TokenId> prompt, std::size_t vocab_size) {
  if (prompt.empty() || prompt.front() != kBos) {
    throw std::invalid_argument("prompt must start with BOS");
  }
  check_tokens(prompt, vocab_size, "prompt");
}

// Tracks where the next output token sits relative to the latest <translate>.
class AlignmentCursor {
 public:
  explicit AlignmentCursor(std::span<const TokenId> prompt)
      : source_(prompt.size() > kPromptHeader ? prompt.subspan(kPromptHeader) : std::span<const TokenId>{}) {}

  // Token whose embedding forms the context, or nullopt for the zero context.
  std::optional<TokenId> context() const {
    if (!open_) {
      return std::nullopt;
    }
    return since_open_ < source_.size() ? source_[since_open_] : kEos;
  }

  void advance(TokenId emitted) {
    if (emitted == kTranslateOpenId) {
      open_ = true;
      since_open_ = 0;
    } else if (open_) {
      ++since_open_;
    }
  }

 private:
  std::span<const TokenId> source_;
  bool open_ = false;
  std::size_t since_open_ = 0;
};

// Plain forward pass. Accumulation order mirrors ad::Tape::affine so both
// paths agree to the last bit on the same hardware.
class Forward {
 public:
  explicit Forward(const PolicyParams& params)
      : p_(params), d_(params.width()), h_(d_, 0.0), z_(d_), r_(d_), rh_(d_), c_(d_) {}

  void consume(TokenId token) {
    const double* x = p_.block(0).value.data() + (static_cast<std::size_t>(token) * d_);
    gate(p_.block(1), p_.block(2), x, h_.data(), z_);
    gate(p_.block(3), p_.block(4), x, h_.data(), r_);
    for (std::size_t i = 0; i < d_; ++i) {
      z_[i] = sigmoid(z_[i]);
      rh_[i] = sigmoid(r_[i]) * h_[i];
    }
    gate(p_.block(5), p_.block(6), x, rh_.data(), c_);
    for (std::size_t i = 0; i < d_; ++i) {
      const double cand = std::tanh(c_[i]);
      h_[i] = h_[i] + (z_[i] * (cand - h_[i]));
    }
  }

  void logits(std::optional<TokenId> context, std::vector<double>& out) const {
    const auto& w = p_.block(7);
    const auto& b = p_.block(8);
    out.resize(w.rows);
    const double* ctx = context ? p_.block(0).value.data() + (static_cast<std::size_t>(*context) * d_) : nullptr;
    for (std::size_t r = 0; r < w.rows; ++r) {
      const double* row = w.value.data() + (r * w.cols);
      double acc = 0.0;
      for (std::size_t c = 0; c < d_; ++c) {
        acc += row[c] * h_[c];
      }
      if (ctx != nullptr) {
        for (std::size_t c = 0; c < d_; ++c) {
          acc += row[d_ + c] * ctx[c];
        }
      } else {
        for (std::size_t c = 0; c < d_; ++c) {
          acc += row[d_ + c] * 0.0;
        }
      }
      out[r] = b.value[r] + acc;
    }
  }

 private:
  void gate(const ad::ParamBlock& w, const ad::ParamBlock& b, const double* x, const double* h,
            std::vector<double>& out) const {
    for (std::size_t r = 0; r < d_; ++r) {
      const double* row = w.value.data() + (r * w.cols);
      double acc = 0.0;
      for (std::size_t c = 0; c < d_; ++c) {
        acc += row[c] * x[c];
      }
      for (std::size_t c = 0; c < d_; ++c) {
        acc += row[d_ + c] * h[c];
      }
      out[r] = b.value[r] + acc;
    }
  }

  const PolicyParams& p_;
  std::size_t d_;
  std::vector<double> h_;
  std::vector<double> z_;
  std::vector<double> r_;
  std::vector<double> rh_;
  std::vector<double> c_;
};

// Returns log of the normaliser of softmax(logits / temperature).
double log_partition(const std::vector<double>& logits, double temperature) {
  const double inv_t = 1.0 / temperature;
  double max_z = logits[0] * inv_t;
  for (const double v : logits) {
    if (!std::isfinite(v)) {
      std::ostringstream msg;
      msg << "non-finite logit encountered (value " << v << ", temperature " << temperature << ")";
      throw NumericalError(msg.str());
    }
    max_z = std::max(max_z, v * inv_t);
  }
  double denom = 0.0;
  for (const double v : logits) {
    denom += std::exp((v * inv_t) - max_z);
  }
  return max_z + std::log(denom);
}

void check_temperature(double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw std::invalid_argument("temperature: must be positive and finite");
  }
}

Forward prime(const PolicyParams& params, std::span<const TokenId> prompt) {
  Forward fwd(params);
  for (const TokenId t : prompt) {
    fwd.consume(t);
  }
  return fwd;
}

}  // namespace

std::vector<double> next_token_distribution(const PolicyParams& params, std::span<const TokenId> prompt,
                                            std::span<const TokenId> prefix, double temperature) {
  check_temperature(temperature);
  check_prompt(prompt, params.vocab_size());
  check_tokens(prefix, params.vocab_size(), "prefix");
  Forward fwd = prime(params, prompt);
  AlignmentCursor cursor(prompt);
  for (const TokenId t : prefix) {
    cursor.advance(t);
    fwd.consume(t);
  }
  std::vector<double> logits;
  fwd.logits(cursor.context(), logits);
  const double log_z = log_partition(logits, temperature);
  std::vector<double> probs(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    probs[i] = std::exp((logits[i] / temperature) - log_z);
  }
  return probs;
}

namespace {

template <typename Choose>
Trajectory decode(const PolicyParams& params, std::span<const TokenId> prompt, double temperature,
                  std::size_t max_len, Choose&& choose) {
  if (max_len == 0) {
    throw std::invalid_argument("max_gen_len: must be at least 1");
  }
  check_temperature(temperature);
  check_prompt(prompt, params.vocab_size());
  Trajectory traj;
  traj.prompt_tokens.assign(prompt.begin(), prompt.end());
  Forward fwd = prime(params, prompt);
  AlignmentCursor cursor(prompt);
  std::vector<double> logits;
  const double inv_t = 1.0 / temperature;
  while (traj.output_tokens.size() < max_len) {
    fwd.logits(cursor.context(), logits);
    const double log_z = log_partition(logits, temperature);
    const TokenId token = choose(logits, inv_t, log_z);
    traj.output_tokens.push_back(token);
    traj.logprobs.push_back((logits[token] * inv_t) - log_z);
    if (token == kEos) {
      break;
    }
    cursor.advance(token);
    fwd.consume(token);
  }
  return traj;
}

}  // namespace

Trajectory sample_response(const PolicyParams& params, std::span<const TokenId> prompt, double temperature,
                           std::size_t max_len, std::uint64_t rng_seed) {
  Rng rng(rng_seed);
  return decode(params, prompt, temperature, max_len,
                [&rng](const std::vector<double>& logits, double inv_t, double log_z) {
                  const double u = rng.uniform();
                  double cumulative = 0.0;
                  TokenId last_positive = 0;
                  for (std::size_t i = 0; i < logits.size(); ++i) {
                    const double p = std::exp((logits[i] * inv_t) - log_z);
                    if (p > 0.0) {
                      last_positive = static_cast<TokenId>(i);
                    }
                    cumulative += p;
                    if (u < cumulative) {
                      return static_cast<TokenId>(i);
                    }
                  }
                  return last_positive;
                });
}

Trajectory greedy_response(const PolicyParams& params, std::span<const TokenId> prompt, std::size_t max_len) {
  return decode(params, prompt, 1.0, max_len, [](const std::vector<double>& logits, double, double) {
    return static_cast<TokenId>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  });
}

std::vector<double> sequence_logprobs(const PolicyParams& params, std::span<const TokenId> prompt,
                                      std::span<const TokenId> output, double temperature) {
  if (output.empty()) {
    throw std::invalid_argument("sequence_logprobs: empty output");
  }
  check_temperature(temperature);
  check_prompt(prompt, params.vocab_size());
  check_tokens(output, params.vocab_size(), "output");
  Forward fwd = prime(params, prompt);
  AlignmentCursor cursor(prompt);
  std::vector<double> logits;
  std::vector<double> out;
  out.reserve(output.size());
  const double inv_t = 1.0 / temperature;
  for (std::size_t t = 0; t < output.size(); ++t) {
    fwd.logits(cursor.context(), logits);
    const double log_z = log_partition(logits, temperature);
    out.push_back((logits[output[t]] * inv_t) - log_z);
    if (t + 1 < output.size()) {
      cursor.advance(output[t]);
      fwd.consume(output[t]);
    }
  }
  return out;
}

namespace {

ad::Var gru_step(ad::Tape& tape, PolicyParams& p, ad::Var h, TokenId token) {
  const ad::Var x = tape.embedding(p.embedding(), token);
  const ad::Var z = tape.sigmoid(tape.affine(p.update_w(), p.update_b(), {x, h}));
  const ad::Var r = tape.sigmoid(tape.affine(p.reset_w(), p.reset_b(), {x, h}));
  const ad::Var cand = tape.tanh(tape.affine(p.candidate_w(), p.candidate_b(), {x, tape.mul(r, h)}));
  return tape.add(h, tape.mul(z, tape.sub(cand, h)));
}

}  // namespace

ad::Var encode_prompt_state(ad::Tape& tape, PolicyParams& params, std::span<const TokenId> prompt) {
  check_prompt(prompt, params.vocab_size());
  ad::Var h = tape.constant(std::vector<double>(params.width(), 0.0));
  for (const TokenId t : prompt) {
    h = gru_step(tape, params, h, t);
  }
  return h;
}

std::vector<ad::Var> sequence_logprob_vars(ad::Tape& tape, PolicyParams& params, std::span<const TokenId> prompt,
                                           ad::Var prompt_state, std::span<const TokenId> output,
                                           double temperature) {
  if (output.empty()) {
    throw std::invalid_argument("sequence_logprobs: empty output");
  }
  check_temperature(temperature);
  check_tokens(output, params.vocab_size(), "output");
  AlignmentCursor cursor(prompt);
  const ad::Var zero_context = tape.constant(std::vector<double>(params.width(), 0.0));
  ad::Var h = prompt_state;
  std::vector<ad::Var> out;
  out.reserve(output.size());
  for (std::size_t t = 0; t < output.size(); ++t) {
    const auto ctx_token = cursor.context();
    const ad::Var ctx = ctx_token ? tape.embedding(params.embedding(), *ctx_token) : zero_context;
    const ad::Var logits = tape.affine(params.output_w(), params.output_b(), {h, ctx});
    out.push_back(tape.log_softmax_at(logits, output[t], temperature));
    if (t + 1 < output.size()) {
      cursor.advance(output[t]);
      h = gru_step(tape, params, h, output[t]);
    }
  }
  return out;
}

void accumulate_gradients(PolicyParams& params, ad::Tape& tape, ad::Var loss) {
  tape.backward(loss);
  for (const auto& block : params.blocks()) {
    for (const double g : block.grad) {
      if (!std::isfinite(g)) {
        throw NumericalError("non-finite gradient in parameter block '" + block.name + "'");
      }
    }
  }
}

}  // namespace mtrz
