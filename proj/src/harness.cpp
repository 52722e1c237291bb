#include "mtrz/harness.hpp"

#include <chrono>
#include <cstdio>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "mtrz/checkpoint.hpp"

namespace mtrz {

namespace {

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::optional<double> optional_from(const nlohmann::json& v) {
  if (v.is_null()) {
    return std::nullopt;
  }
  return v.get<double>();
}

void ensure_parent(const std::filesystem::path& path, const std::string& field) {
  const auto parent = path.parent_path();
  if (parent.empty()) {
    return;
  }
  std::error_code ec;
  std::filesystem::create_directories(parent, ec);
  if (ec) {
    throw ConfigError(field + ": cannot create " + parent.string() + ": " + ec.message());
  }
}

Vocabulary vocabulary_for(const ExperimentConfig& config, const Corpus& corpus) {
  if (config.corpus.source == CorpusSource::Generate) {
    return Vocabulary(config.corpus.spec.vocabulary_tokens());
  }
  std::vector<PromptInstance> all = corpus.train;
  all.insert(all.end(), corpus.test.begin(), corpus.test.end());
  return build_vocabulary(all);
}

LoadOptions load_options(const ExperimentConfig& config, const std::string& path) {
  LoadOptions opts;
  opts.format = config.corpus.format.value_or(infer_file_format(path));
  opts.min_chars = config.corpus.min_chars;
  return opts;
}

void check_vocab(const Checkpoint& ck, const Vocabulary& vocab, const std::filesystem::path& path) {
  if (ck.vocab_hash != vocab.hash() || ck.params.vocab_size() != vocab.size()) {
    throw std::runtime_error("checkpoint " + path.string() + " was trained with a different vocabulary");
  }
}

}  // namespace

const std::vector<std::string>& step_metrics_keys() {
  static const std::vector<std::string> keys = {"step",     "mean_reward", "format_error_rate", "mean_response_len_tokens",
                                                "mean_kl",  "loss",        "mean_lex",          "mean_sem",
                                                "eval_bleu", "eval_sem",   "wall_ms"};
  return keys;
}

nlohmann::ordered_json metrics_to_json(const StepMetrics& m) {
  nlohmann::ordered_json j;
  j["step"] = m.step;
  j["mean_reward"] = m.mean_reward;
  j["format_error_rate"] = m.format_error_rate;
  j["mean_response_len_tokens"] = m.mean_response_len_tokens;
  j["mean_kl"] = m.mean_kl;
  j["loss"] = m.loss;
  j["mean_lex"] = optional_json(m.mean_lex);
  j["mean_sem"] = optional_json(m.mean_sem);
  j["eval_bleu"] = optional_json(m.eval_bleu);
  j["eval_sem"] = optional_json(m.eval_sem);
  j["wall_ms"] = m.wall_ms;
  return j;
}

StepMetrics metrics_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.size() != step_metrics_keys().size()) {
    throw std::runtime_error("log line does not match the metrics schema");
  }
  for (const auto& key : step_metrics_keys()) {
    if (!j.contains(key)) {
      throw std::runtime_error("log line is missing key " + key);
    }
  }
  StepMetrics m;
  m.step = j.at("step").get<std::uint64_t>();
  m.mean_reward = j.at("mean_reward").get<double>();
  m.format_error_rate = j.at("format_error_rate").get<double>();
  m.mean_response_len_tokens = j.at("mean_response_len_tokens").get<double>();
  m.mean_kl = j.at("mean_kl").get<double>();
  m.loss = j.at("loss").get<double>();
  m.mean_lex = optional_from(j.at("mean_lex"));
  m.mean_sem = optional_from(j.at("mean_sem"));
  m.eval_bleu = optional_from(j.at("eval_bleu"));
  m.eval_sem = optional_from(j.at("eval_sem"));
  m.wall_ms = j.at("wall_ms").get<double>();
  return m;
}

MetricsLogger::MetricsLogger(const std::filesystem::path& path, std::optional<std::uint64_t> keep_through) {
  ensure_parent(path, "log_path");
  std::string kept;
  if (keep_through && std::filesystem::exists(path)) {
    std::ifstream in(path, std::ios::binary);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) {
        continue;
      }
      const auto m = metrics_from_json(nlohmann::json::parse(line));
      if (m.step > *keep_through) {
        break;
      }
      kept += line + "\n";
      last_step_ = m.step;
    }
  }
  out_.open(path, std::ios::binary | std::ios::trunc);
  if (!out_) {
    throw ConfigError("log_path: cannot write " + path.string());
  }
  out_ << kept;
  out_.flush();
}

void MetricsLogger::write(const StepMetrics& metrics) {
  if (metrics.step <= last_step_) {
    throw std::logic_error("metrics log: step " + std::to_string(metrics.step) + " does not increase");
  }
  out_ << metrics_to_json(metrics).dump() << '\n';
  out_.flush();
  if (!out_) {
    throw std::runtime_error("metrics log: write failed");
  }
  last_step_ = metrics.step;
}

ExperimentContext build_context(const ExperimentConfig& config) {
  config.validate();
  ExperimentContext ctx;
  if (config.corpus.source == CorpusSource::Generate) {
    const auto& c = config.corpus;
    ctx.corpus = generate_corpus(c.spec, c.train_size, c.test_size, c.min_len, c.max_len, c.seed);
  } else {
    ctx.corpus.train = load_parallel_file(config.corpus.train_file, load_options(config, config.corpus.train_file)).instances;
    if (!config.corpus.test_file.empty()) {
      ctx.corpus.test = load_parallel_file(config.corpus.test_file, load_options(config, config.corpus.test_file)).instances;
    }
  }
  ctx.vocab = std::make_unique<Vocabulary>(vocabulary_for(config, ctx.corpus));
  switch (config.scorer) {
    case ScorerKind::Mock:
      ctx.scorer = std::make_unique<MockSynonymScorer>(config.corpus.spec.lexicon());
      break;
    case ScorerKind::Remote:
      ctx.scorer = std::make_unique<RemoteScorer>(config.remote);
      break;
    case ScorerKind::None:
      break;
  }
  auto lex = config.lex_metric == LexMetricKind::Chrf ? chrf_metric() : bleu_metric();
  ctx.engine = std::make_unique<RewardEngine>(config.reward, std::move(lex), ctx.scorer.get());
  return ctx;
}

std::filesystem::path checkpoint_file(const std::filesystem::path& dir, std::uint64_t step) {
  std::ostringstream name;
  name << "step_" << std::setw(6) << std::setfill('0') << step << ".ckpt";
  return dir / name.str();
}

TrainSummary cmd_train(const ExperimentConfig& config, const TrainOptions& options) {
  auto ctx = build_context(config);
  const Vocabulary& vocab = *ctx.vocab;
  const std::filesystem::path dir = config.checkpoint_dir;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) {
    throw ConfigError("checkpoint_dir: cannot create " + dir.string() + ": " + ec.message());
  }
  const auto say = [&](const std::string& text) {
    if (options.progress != nullptr) {
      *options.progress << text << std::endl;
    }
  };
  const auto run_eval = [&](const PolicyParams& policy) -> std::optional<EvalReport> {
    if (ctx.corpus.test.empty()) {
      return std::nullopt;
    }
    return evaluate(policy, vocab, ctx.corpus.test, config.reward.thinking_required, ctx.scorer.get(), config.eval);
  };

  TrainSummary summary;
  std::optional<PolicyParams> reference;
  std::optional<TrainerState> state;
  if (options.resume) {
    auto ck = load_checkpoint(*options.resume);
    check_vocab(ck, vocab, *options.resume);
    const auto ref_path = checkpoint_file(options.resume->parent_path(), 0);
    auto ref = load_checkpoint(ref_path);
    check_vocab(ref, vocab, ref_path);
    reference = std::move(ref.params);
    state = TrainerState{std::move(ck.params), std::move(ck.adam), ck.step};
    say("resumed from step " + std::to_string(state->step));
  } else {
    auto policy = PolicyParams::initialized(vocab.size(), config.model_width, config.train.seed);
    auto prior = config.prior;
    prior.seed = config.train.seed;
    if (prior.steps > 0) {
      const double nll = pretrain_base_prior(policy, vocab, ctx.corpus.train, prior);
      say("base prior: " + std::to_string(prior.steps) + " steps, final nll " + std::to_string(nll));
    }
    save_checkpoint(checkpoint_file(dir, 0), {vocab.hash(), policy, AdamState::zeros_like(policy), 0});
    summary.initial_eval = run_eval(policy);
    if (summary.initial_eval) {
      say("step 0 eval bleu " + std::to_string(summary.initial_eval->bleu));
    }
    state = TrainerState{policy, AdamState::zeros_like(policy), 0};
    reference = std::move(policy);
  }
  if (state->step > config.steps) {
    throw ConfigError("steps: checkpoint is already at step " + std::to_string(state->step));
  }

  MetricsLogger logger(config.log_path, options.resume ? std::optional(state->step) : std::nullopt);
  const EpochSampler sampler(ctx.corpus.train.size(), config.train.seed);
  summary.final_checkpoint = checkpoint_file(dir, state->step);
  while (state->step < config.steps) {
    const auto started = std::chrono::steady_clock::now();
    const auto batch = sample_batch(ctx.corpus.train, sampler, state->step, config.train.batch_prompts);
    auto metrics = train_step(*state, *reference, vocab, batch, *ctx.engine, config.train);
    const bool last = state->step == config.steps;
    if (last || (config.eval_interval > 0 && state->step % config.eval_interval == 0)) {
      if (auto report = run_eval(state->policy)) {
        metrics.eval_bleu = report->bleu;
        metrics.eval_sem = report->mean_sem;
        if (last) {
          summary.final_eval = report;
        }
      }
    }
    if (config.log_wall_time) {
      metrics.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    }
    logger.write(metrics);
    if (last || state->step % config.checkpoint_interval == 0) {
      summary.final_checkpoint = checkpoint_file(dir, state->step);
      save_checkpoint(summary.final_checkpoint, {vocab.hash(), state->policy, state->adam, state->step});
    }
    if (metrics.eval_bleu || state->step % 50 == 0) {
      std::ostringstream line;
      line << "step " << state->step << " reward " << metrics.mean_reward << " format_error_rate "
           << metrics.format_error_rate;
      if (metrics.eval_bleu) {
        line << " eval_bleu " << *metrics.eval_bleu;
      }
      say(line.str());
    }
  }
  summary.final_step = state->step;
  return summary;
}

EvalReport cmd_eval(const ExperimentConfig& config, const std::filesystem::path& checkpoint) {
  const auto ctx = build_context(config);
  if (ctx.corpus.test.empty()) {
    throw ConfigError("corpus_test_file: evaluation needs a test split");
  }
  const auto ck = load_checkpoint(checkpoint);
  check_vocab(ck, *ctx.vocab, checkpoint);
  return evaluate(ck.params, *ctx.vocab, ctx.corpus.test, config.reward.thinking_required, ctx.scorer.get(),
                  config.eval);
}

nlohmann::ordered_json eval_report_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["instances"] = r.instances;
  j["bleu"] = r.bleu;
  j["chrf"] = r.chrf;
  j["mean_sem"] = optional_json(r.mean_sem);
  j["format_error_rate"] = r.format_error_rate;
  j["mean_response_len_tokens"] = r.mean_response_len_tokens;
  return j;
}

nlohmann::ordered_json cmd_score(const ExperimentConfig& config, const std::string& src, const std::string& trans,
                                 const std::optional<std::string>& ref) {
  if (config.reward.metric != MetricMode::Sem && !ref) {
    throw ConfigError("ref: required for reward_mode " + std::string(to_string(config.reward.metric)));
  }
  auto ctx_config = config;
  // Scoring one response never needs a corpus; skip generation cost and checks.
  ctx_config.corpus.train_size = 1;
  ctx_config.corpus.test_size = 0;
  ctx_config.corpus.min_len = 1;
  ctx_config.corpus.max_len = 1;
  ctx_config.validate();
  std::unique_ptr<SemanticScorer> scorer;
  if (config.scorer == ScorerKind::Mock) {
    scorer = std::make_unique<MockSynonymScorer>(config.corpus.spec.lexicon());
  } else if (config.scorer == ScorerKind::Remote) {
    scorer = std::make_unique<RemoteScorer>(config.remote);
  }
  const RewardEngine engine(config.reward, config.lex_metric == LexMetricKind::Chrf ? chrf_metric() : bleu_metric(),
                            scorer.get());
  const PromptInstance instance{config.corpus.spec.src_lang, config.corpus.spec.tgt_lang, src, ref};
  const auto b = engine.score(instance, trans);
  nlohmann::ordered_json j;
  j["s_format"] = b.s_format;
  j["s_metric"] = optional_json(b.s_metric);
  j["r"] = b.r;
  j["reward_mode"] = std::string(to_string(b.mode.metric));
  j["thinking_required"] = b.mode.thinking_required;
  j["lex"] = optional_json(b.lex);
  j["sem"] = optional_json(b.sem);
  return j;
}

GeneratedFiles cmd_generate_corpus(const ExperimentConfig& config, const std::string& prefix) {
  if (prefix.empty()) {
    throw ConfigError("out: output prefix must not be empty");
  }
  const auto& c = config.corpus;
  try {
    c.spec.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const auto corpus = generate_corpus(c.spec, c.train_size, c.test_size, c.min_len, c.max_len, c.seed);
  GeneratedFiles files{prefix + ".train.jsonl", prefix + ".test.jsonl"};
  ensure_parent(files.train, "out");
  write_jsonl(files.train, corpus.train);
  write_jsonl(files.test, corpus.test);
  return files;
}

}  // namespace mtrz
