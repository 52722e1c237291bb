#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mtrz/rng.hpp"

namespace mtrz::testing {

GradientCheck check_gradients(PolicyParams& params, const LossBuilder& build, double h, double floor) {
  params.zero_grad();
  {
    ad::Tape tape;
    const ad::Var loss = build(tape, params);
    accumulate_gradients(params, tape, loss);
  }
  const auto eval = [&] {
    ad::Tape tape;
    return tape.scalar_value(build(tape, params));
  };
  GradientCheck out;
  for (auto& block : params.blocks()) {
    for (std::size_t i = 0; i < block.size(); ++i) {
      const double saved = block.value[i];
      block.value[i] = saved + h;
      const double up = eval();
      block.value[i] = saved - h;
      const double down = eval();
      block.value[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = block.grad[i];
      const double abs_err = std::abs(analytic - numeric);
      const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
      out.max_abs_error = std::max(out.max_abs_error, abs_err);
      out.max_rel_error = std::max(out.max_rel_error, abs_err / scale);
      ++out.checked;
    }
  }
  params.zero_grad();
  return out;
}

PolicyParams random_policy(std::size_t vocab, std::size_t width, std::uint64_t seed, double scale) {
  PolicyParams p(vocab, width);
  Rng rng(seed);
  for (auto& b : p.blocks()) {
    for (auto& v : b.value) {
      v = rng.uniform(-scale, scale);
    }
  }
  return p;
}

namespace {

std::vector<double> matvec(const ad::ParamBlock& w, const ad::ParamBlock& b, const std::vector<double>& x) {
  std::vector<double> out(w.rows);
  for (std::size_t r = 0; r < w.rows; ++r) {
    double acc = b.value[r];
    for (std::size_t c = 0; c < w.cols; ++c) {
      acc += w.at(r, c) * x[c];
    }
    out[r] = acc;
  }
  return out;
}

std::vector<double> concat(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> out(a);
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

std::vector<double> row(const ad::ParamBlock& table, TokenId id) {
  return {table.value.begin() + static_cast<std::ptrdiff_t>(id * table.cols),
          table.value.begin() + static_cast<std::ptrdiff_t>((id + 1) * table.cols)};
}

}  // namespace

std::vector<double> naive_logprobs(const PolicyParams& params, const std::vector<TokenId>& prompt,
                                   const std::vector<TokenId>& output, double temperature) {
  const std::size_t d = params.width();
  const auto& b = params.blocks();
  std::vector<double> h(d, 0.0);
  const auto step = [&](TokenId tok) {
    const auto x = row(b[0], tok);
    auto z = matvec(b[1], b[2], concat(x, h));
    auto r = matvec(b[3], b[4], concat(x, h));
    for (std::size_t i = 0; i < d; ++i) {
      z[i] = 1.0 / (1.0 + std::exp(-z[i]));
      r[i] = 1.0 / (1.0 + std::exp(-r[i])) * h[i];
    }
    auto c = matvec(b[5], b[6], concat(x, r));
    for (std::size_t i = 0; i < d; ++i) {
      h[i] = (1.0 - z[i]) * h[i] + z[i] * std::tanh(c[i]);
    }
  };
  for (const auto t : prompt) {
    step(t);
  }
  const std::vector<TokenId> source(prompt.begin() + std::min<std::ptrdiff_t>(3, std::ssize(prompt)), prompt.end());
  std::vector<double> out;
  std::ptrdiff_t last_open = -1;
  for (std::size_t t = 0; t < output.size(); ++t) {
    std::vector<double> ctx(d, 0.0);
    if (last_open >= 0) {
      const auto cursor = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(t) - last_open - 1);
      ctx = row(b[0], cursor < source.size() ? source[cursor] : kEos);
    }
    const auto logits = matvec(b[7], b[8], concat(h, ctx));
    double mx = -1e300;
    for (const double v : logits) {
      mx = std::max(mx, v / temperature);
    }
    double denom = 0.0;
    for (const double v : logits) {
      denom += std::exp(v / temperature - mx);
    }
    out.push_back(logits[output[t]] / temperature - mx - std::log(denom));
    if (output[t] == kTranslateOpenId) {
      last_open = static_cast<std::ptrdiff_t>(t);
    }
    step(output[t]);
  }
  return out;
}

double brute_force_loss(const std::vector<PlainGroup>& groups, double clip_eps, double beta) {
  double objective = 0.0;
  double kl_sum = 0.0;
  double kl_count = 0.0;
  for (const auto& g : groups) {
    double group_sum = 0.0;
    for (std::size_t i = 0; i < g.advantages.size(); ++i) {
      double seq = 0.0;
      for (std::size_t t = 0; t < g.theta[i].size(); ++t) {
        const double rho = std::exp(g.theta[i][t] - g.old_logp[i][t]);
        const double clipped = std::min(std::max(rho, 1.0 - clip_eps), 1.0 + clip_eps);
        seq += std::min(rho * g.advantages[i], clipped * g.advantages[i]);
        if (beta > 0.0) {
          const double ratio = std::exp(g.ref_logp[i][t] - g.theta[i][t]);
          kl_sum += ratio - std::log(ratio) - 1.0;
          kl_count += 1.0;
        }
      }
      group_sum += seq / static_cast<double>(g.theta[i].size());
    }
    objective += group_sum / static_cast<double>(g.advantages.size());
  }
  objective /= static_cast<double>(groups.size());
  if (beta > 0.0) {
    objective -= beta * kl_sum / kl_count;
  }
  return -objective;
}

ad::Var quadratic_loss(ad::Tape& tape, PolicyParams& params) {
  std::vector<ad::Var> terms;
  double weight = 1.0;
  for (auto& block : params.blocks()) {
    terms.push_back(tape.scale(tape.sum_squares(block), weight));
    weight += 0.5;
  }
  return tape.sum(terms);
}

LossBuilder nll_loss(std::size_t vocab, std::uint64_t seed) {
  const auto prompt = random_prompt(vocab, 4, mix_seed(seed, 1));
  const auto output = random_output(vocab, 7, mix_seed(seed, 2));
  return [prompt, output](ad::Tape& tape, PolicyParams& params) {
    const auto state = encode_prompt_state(tape, params, prompt);
    const auto logps = sequence_logprob_vars(tape, params, prompt, state, output, 0.7);
    return tape.scale(tape.sum(logps), -1.0);
  };
}

LossBuilder grpo_micro_batch_loss(const PolicyParams& params, std::uint64_t seed) {
  struct Rollout {
    std::vector<TokenId> output;
    std::vector<double> old_logp;
    std::vector<double> ref_logp;
  };
  struct Prompt {
    std::vector<TokenId> tokens;
    std::vector<Rollout> rollouts;
    std::vector<double> advantages;
  };
  Rng rng(mix_seed(seed, 3));
  std::vector<Prompt> prompts;
  for (std::uint64_t p = 0; p < 2; ++p) {
    Prompt prompt{random_prompt(params.vocab_size(), 3 + p, mix_seed(seed, 10, p)), {}, {}};
    std::vector<double> rewards;
    for (std::uint64_t g = 0; g < 2; ++g) {
      Rollout r{random_output(params.vocab_size(), 3 + (2 * g) + p, mix_seed(seed, 20, p, g)), {}, {}};
      const auto current = sequence_logprobs(params, prompt.tokens, r.output, 1.0);
      for (const double lp : current) {
        r.old_logp.push_back(lp + rng.uniform(-0.1, 0.1));
        r.ref_logp.push_back(lp + rng.uniform(-0.5, 0.5));
      }
      prompt.rollouts.push_back(std::move(r));
      rewards.push_back(1.0 + rng.uniform());
    }
    prompt.advantages = compute_advantages(rewards);
    prompts.push_back(std::move(prompt));
  }
  return [prompts](ad::Tape& tape, PolicyParams& pp) {
    std::vector<GroupLogprobs> groups;
    for (const auto& prompt : prompts) {
      GroupLogprobs g;
      g.advantages = prompt.advantages;
      const auto state = encode_prompt_state(tape, pp, prompt.tokens);
      for (const auto& r : prompt.rollouts) {
        g.theta.push_back(sequence_logprob_vars(tape, pp, prompt.tokens, state, r.output, 1.0));
        g.old_logp.push_back(r.old_logp);
        g.ref_logp.push_back(r.ref_logp);
      }
      groups.push_back(std::move(g));
    }
    return grpo_loss(tape, groups, {.clip_eps = 0.2, .kl_beta = 0.5});
  };
}

std::vector<TokenId> random_prompt(std::size_t vocab, std::size_t source_len, std::uint64_t seed) {
  if (vocab <= kReservedTokens) {
    throw std::invalid_argument("random_prompt: vocabulary has no ordinary tokens");
  }
  Rng rng(seed);
  std::vector<TokenId> out{kBos};
  for (std::size_t i = 0; i < source_len + 2; ++i) {
    out.push_back(static_cast<TokenId>(kReservedTokens + rng.below(vocab - kReservedTokens)));
  }
  return out;
}

std::vector<TokenId> random_output(std::size_t vocab, std::size_t len, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TokenId> out;
  for (std::size_t i = 0; i < len; ++i) {
    // Bias toward tags so the alignment context is exercised.
    if (rng.bernoulli(0.2)) {
      out.push_back(kTranslateOpenId);
    } else {
      out.push_back(static_cast<TokenId>(rng.below(vocab)));
    }
  }
  return out;
}

}  // namespace mtrz::testing
