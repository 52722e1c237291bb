#include "mtrz/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>
#include <stdexcept>

#include "mtrz/lexical_metrics.hpp"
#include "mtrz/rng.hpp"
#include "mtrz/task_corpus.hpp"
#include "mtrz/utf8.hpp"

namespace mtrz {

void TrainConfig::validate() const {
  if (group_size < 2) {
    throw std::invalid_argument("group_size: must be at least 2");
  }
  if (batch_prompts < 1) {
    throw std::invalid_argument("batch_prompts: must be at least 1");
  }
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("learning_rate: must be positive");
  }
  if (!(clip_eps > 0.0 && clip_eps < 1.0)) {
    throw std::invalid_argument("clip_eps: must lie in (0, 1)");
  }
  if (!(kl_beta >= 0.0) || !std::isfinite(kl_beta)) {
    throw std::invalid_argument("kl_beta: must be nonnegative");
  }
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw std::invalid_argument("temperature: must be positive");
  }
  if (max_gen_len < 1) {
    throw std::invalid_argument("max_gen_len: must be at least 1");
  }
  if (ppo_epochs < 1) {
    throw std::invalid_argument("ppo_epochs: must be at least 1");
  }
}

namespace {

std::size_t response_length(const Trajectory& t) {
  std::size_t n = t.output_tokens.size();
  if (n > 0 && t.output_tokens.back() == kEos) {
    --n;
  }
  return n;
}

}  // namespace

std::vector<RolloutGroup> collect_rollouts(const PolicyParams& policy, const Vocabulary& vocab,
                                           std::span<const PromptInstance> batch, const RewardEngine& engine,
                                           const TrainConfig& config, std::uint64_t step) {
  std::vector<RolloutGroup> groups;
  groups.reserve(batch.size());
  for (std::size_t p = 0; p < batch.size(); ++p) {
    RolloutGroup group;
    group.prompt = batch[p];
    const auto prompt = encode_prompt(batch[p], vocab);
    for (std::size_t i = 0; i < config.group_size; ++i) {
      for (std::uint64_t attempt = 0;; ++attempt) {
        auto traj = sample_response(policy, prompt, config.temperature, config.max_gen_len,
                                    mix_seed(config.seed, step, p, i, attempt));
        try {
          auto breakdown = engine.score(batch[p], vocab.decode(traj.output_tokens));
          group.rewards.push_back(breakdown.r);
          group.breakdowns.push_back(std::move(breakdown));
          group.trajectories.push_back(std::move(traj));
          break;
        } catch (const ScorerError&) {
          if (attempt >= 1) {
            throw;
          }
        }
      }
    }
    group.advantages = compute_advantages(group.rewards);
    groups.push_back(std::move(group));
  }
  return groups;
}

StepMetrics train_step(TrainerState& state, const PolicyParams& ref_policy, const Vocabulary& vocab,
                       std::span<const PromptInstance> batch, const RewardEngine& engine, const TrainConfig& config) {
  config.validate();
  if (batch.empty()) {
    throw std::invalid_argument("train_step: empty batch");
  }
  if (ref_policy.vocab_size() != state.policy.vocab_size() || ref_policy.width() != state.policy.width()) {
    throw std::invalid_argument("train_step: reference policy shape differs from the policy");
  }

  const auto groups = collect_rollouts(state.policy, vocab, batch, engine, config, state.step);

  StepMetrics metrics;
  metrics.step = state.step + 1;
  std::size_t rollouts = 0;
  std::size_t malformed = 0;
  double reward_sum = 0.0;
  double length_sum = 0.0;
  double lex_sum = 0.0;
  double sem_sum = 0.0;
  std::size_t lex_n = 0;
  std::size_t sem_n = 0;
  for (const auto& g : groups) {
    for (std::size_t i = 0; i < g.trajectories.size(); ++i) {
      ++rollouts;
      reward_sum += g.rewards[i];
      length_sum += static_cast<double>(response_length(g.trajectories[i]));
      const auto& b = g.breakdowns[i];
      if (b.s_format < 0) {
        ++malformed;
      }
      if (b.lex) {
        lex_sum += *b.lex;
        ++lex_n;
      }
      if (b.sem) {
        sem_sum += *b.sem;
        ++sem_n;
      }
    }
  }
  const auto n = static_cast<double>(rollouts);
  metrics.mean_reward = reward_sum / n;
  metrics.format_error_rate = static_cast<double>(malformed) / n;
  metrics.mean_response_len_tokens = length_sum / n;
  if (lex_n > 0) {
    metrics.mean_lex = lex_sum / static_cast<double>(lex_n);
  }
  if (sem_n > 0) {
    metrics.mean_sem = sem_sum / static_cast<double>(sem_n);
  }

  // Reference log-probabilities, needed for the KL metric and the penalty.
  std::vector<std::vector<std::vector<double>>> ref_logp(groups.size());
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    for (const auto& t : groups[gi].trajectories) {
      ref_logp[gi].push_back(sequence_logprobs(ref_policy, t.prompt_tokens, t.output_tokens, config.temperature));
    }
  }
  double kl_sum = 0.0;
  std::size_t kl_tokens = 0;
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    for (std::size_t i = 0; i < groups[gi].trajectories.size(); ++i) {
      const auto& t = groups[gi].trajectories[i];
      for (std::size_t k = 0; k < t.logprobs.size(); ++k) {
        kl_sum += kl_approx(ref_logp[gi][i][k], t.logprobs[k]);
        ++kl_tokens;
      }
    }
  }
  metrics.mean_kl = kl_sum / static_cast<double>(kl_tokens);

  const LossConfig loss_config{config.clip_eps, config.kl_beta, config.aggregation};
  const bool use_kl = config.kl_beta > 0.0;
  std::vector<std::vector<std::vector<double>>> old_logp(groups.size());
  for (std::size_t epoch = 0; epoch < config.ppo_epochs; ++epoch) {
    ad::Tape tape;
    std::vector<GroupLogprobs> inputs;
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
      const auto& g = groups[gi];
      const bool degenerate =
          std::all_of(g.advantages.begin(), g.advantages.end(), [](double a) { return a == 0.0; });
      if (degenerate && !use_kl) {
        continue;  // contributes exactly zero to loss and gradient
      }
      GroupLogprobs in;
      in.advantages = g.advantages;
      const ad::Var prompt_state = encode_prompt_state(tape, state.policy, g.trajectories.front().prompt_tokens);
      for (std::size_t i = 0; i < g.trajectories.size(); ++i) {
        const auto& t = g.trajectories[i];
        in.theta.push_back(sequence_logprob_vars(tape, state.policy, t.prompt_tokens, prompt_state, t.output_tokens,
                                                 config.temperature));
      }
      if (epoch == 0) {
        // theta == theta_old here, so every ratio is exactly 1.
        for (const auto& seq : in.theta) {
          std::vector<double> values;
          values.reserve(seq.size());
          for (const auto v : seq) {
            values.push_back(tape.scalar_value(v));
          }
          old_logp[gi].push_back(std::move(values));
        }
      }
      in.old_logp = old_logp[gi];
      if (use_kl) {
        in.ref_logp = ref_logp[gi];
      }
      inputs.push_back(std::move(in));
    }
    state.policy.zero_grad();
    if (!inputs.empty()) {
      const ad::Var loss = grpo_loss(tape, inputs, loss_config, groups.size());
      if (epoch == 0) {
        metrics.loss = tape.scalar_value(loss);
      }
      accumulate_gradients(state.policy, tape, loss);
    } else if (epoch == 0) {
      metrics.loss = 0.0;
    }
    optimizer_update(state.policy, state.adam, config.learning_rate);
    state.policy.zero_grad();
  }
  ++state.step;
  return metrics;
}

EvalReport evaluate(const PolicyParams& policy, const Vocabulary& vocab, std::span<const PromptInstance> test,
                    bool thinking_required, SemanticScorer* scorer, const EvalOptions& options) {
  if (test.empty()) {
    throw std::invalid_argument("evaluate: empty test set");
  }
  EvalReport report;
  report.instances = test.size();
  std::vector<BleuStats> bleu_stats;
  ChrfStats chrf_total;
  std::size_t malformed = 0;
  double length_sum = 0.0;
  double sem_sum = 0.0;
  for (std::size_t k = 0; k < test.size(); ++k) {
    const auto& inst = test[k];
    if (!inst.ref_text) {
      throw std::invalid_argument("evaluate: test instance " + std::to_string(k) + " has no reference");
    }
    const auto prompt = encode_prompt(inst, vocab);
    const auto traj = options.greedy ? greedy_response(policy, prompt, options.max_gen_len)
                                     : sample_response(policy, prompt, options.temperature, options.max_gen_len,
                                                       mix_seed(options.seed, 0xE7A1, k));
    length_sum += static_cast<double>(response_length(traj));
    const auto parsed = parse_response(vocab.decode(traj.output_tokens), thinking_required);
    std::string hyp;
    if (parsed.format_ok) {
      hyp = utf8::trim(parsed.translate_text);
    } else {
      ++malformed;
    }
    bleu_stats.push_back(bleu_statistics(tokenize(hyp), tokenize(*inst.ref_text)));
    chrf_total += chrf_statistics(hyp, *inst.ref_text);
    if (scorer != nullptr && parsed.format_ok) {
      sem_sum += scorer->score(ScoreRequest{inst.src_text, hyp, inst.ref_text});
    }
  }
  const auto n = static_cast<double>(test.size());
  report.bleu = corpus_bleu(bleu_stats);
  report.chrf = chrf_from_statistics(chrf_total);
  if (scorer != nullptr) {
    report.mean_sem = sem_sum / n;
  }
  report.format_error_rate = static_cast<double>(malformed) / n;
  report.mean_response_len_tokens = length_sum / n;
  return report;
}

double pretrain_base_prior(PolicyParams& policy, const Vocabulary& vocab, std::span<const PromptInstance> train,
                           const BasePriorConfig& config) {
  if (train.empty()) {
    throw std::invalid_argument("base prior: empty training set");
  }
  if (config.steps == 0) {
    return 0.0;
  }
  // Content tokens: every word that appears on the target side.
  std::set<TokenId> content_set;
  for (const auto& inst : train) {
    if (inst.ref_text) {
      for (const auto id : vocab.encode(*inst.ref_text)) {
        if (id >= kReservedTokens) {
          content_set.insert(id);
        }
      }
    }
  }
  if (content_set.empty()) {
    throw std::invalid_argument("base prior: training references contain no known tokens");
  }
  const std::vector<TokenId> content(content_set.begin(), content_set.end());

  AdamState adam = AdamState::zeros_like(policy);
  const EpochSampler sampler(train.size(), mix_seed(config.seed, 0xBA5E));
  double last_nll = 0.0;
  for (std::size_t step = 0; step < config.steps; ++step) {
    const auto batch = sampler.batch(step, std::min(config.batch, train.size()));
    ad::Tape tape;
    std::vector<ad::Var> token_logps;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto& inst = train[batch[b]];
      const auto prompt = encode_prompt(inst, vocab);
      Rng rng(mix_seed(config.seed, step, b));
      const auto pick = [&] { return content[rng.below(content.size())]; };
      std::vector<TokenId> out;
      const bool drop[5] = {rng.bernoulli(config.corruption), rng.bernoulli(config.corruption),
                            rng.bernoulli(config.corruption), rng.bernoulli(config.corruption),
                            rng.bernoulli(config.corruption)};
      if (!drop[0]) {
        out.push_back(kThinkOpenId);
      }
      const auto think_len = rng.below(config.max_think_tokens + 1);
      for (std::uint64_t k = 0; k < think_len; ++k) {
        out.push_back(pick());
      }
      if (!drop[1]) {
        out.push_back(kThinkCloseId);
      }
      if (!drop[2]) {
        out.push_back(kTranslateOpenId);
      }
      for (std::size_t k = kPromptHeader; k < prompt.size(); ++k) {
        out.push_back(pick());
      }
      if (!drop[3]) {
        out.push_back(kTranslateCloseId);
      }
      if (drop[4]) {
        out.push_back(pick());
      }
      out.push_back(kEos);
      const ad::Var state = encode_prompt_state(tape, policy, prompt);
      const auto lps = sequence_logprob_vars(tape, policy, prompt, state, out, 1.0);
      token_logps.insert(token_logps.end(), lps.begin(), lps.end());
    }
    const ad::Var loss = tape.scale(tape.mean(token_logps), -1.0);
    last_nll = tape.scalar_value(loss);
    policy.zero_grad();
    accumulate_gradients(policy, tape, loss);
    optimizer_update(policy, adam, config.learning_rate);
    policy.zero_grad();
  }
  return last_nll;
}

}  // namespace mtrz
