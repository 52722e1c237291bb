#include "mtrz/experiment.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

namespace mtrz {

namespace {

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view expected) {
  throw ConfigError(std::string(key) + ": invalid value '" + std::string(value) + "' (expected " +
                    std::string(expected) + ")");
}

std::uint64_t parse_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    bad_value(key, v, "a nonnegative integer");
  }
  return out;
}

std::size_t parse_size(std::string_view key, std::string_view v) { return static_cast<std::size_t>(parse_u64(key, v)); }

double parse_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty() || !std::isfinite(out)) {
    bad_value(key, v, "a finite number");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") {
    return true;
  }
  if (v == "false" || v == "0") {
    return false;
  }
  bad_value(key, v, "true or false");
}

std::string fmt(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, ptr};
}

std::string fmt(std::uint64_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

template <typename Parse>
auto wrap(std::string_view key, std::string_view v, Parse parse) {
  try {
    return parse(v);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    bad_value(key, v, "a recognised option");
  }
}

struct Setting {
  std::string key;
  std::function<void(ExperimentConfig&, std::string_view)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define MTRZ_SIZE(name, field)                                                                          \
  Setting {                                                                                             \
    name, [](ExperimentConfig& c, std::string_view v) { c.field = parse_size(name, v); },              \
        [](const ExperimentConfig& c) { return fmt(static_cast<std::uint64_t>(c.field)); }              \
  }
#define MTRZ_U64(name, field)                                                                           \
  Setting {                                                                                             \
    name, [](ExperimentConfig& c, std::string_view v) { c.field = parse_u64(name, v); },               \
        [](const ExperimentConfig& c) { return fmt(static_cast<std::uint64_t>(c.field)); }              \
  }
#define MTRZ_DOUBLE(name, field)                                                                        \
  Setting {                                                                                             \
    name, [](ExperimentConfig& c, std::string_view v) { c.field = parse_double(name, v); },            \
        [](const ExperimentConfig& c) { return fmt(c.field); }                                          \
  }
#define MTRZ_BOOL(name, field)                                                                          \
  Setting {                                                                                             \
    name, [](ExperimentConfig& c, std::string_view v) { c.field = parse_bool(name, v); },              \
        [](const ExperimentConfig& c) { return fmt(c.field); }                                          \
  }
#define MTRZ_STRING(name, field)                                                                        \
  Setting {                                                                                             \
    name, [](ExperimentConfig& c, std::string_view v) { c.field = std::string(v); },                   \
        [](const ExperimentConfig& c) { return c.field; }                                               \
  }

const std::vector<Setting>& settings() {
  static const std::vector<Setting> table = {
      MTRZ_SIZE("group_size", train.group_size),
      MTRZ_SIZE("batch_prompts", train.batch_prompts),
      MTRZ_DOUBLE("learning_rate", train.learning_rate),
      MTRZ_DOUBLE("clip_eps", train.clip_eps),
      MTRZ_DOUBLE("kl_beta", train.kl_beta),
      MTRZ_DOUBLE("temperature", train.temperature),
      MTRZ_SIZE("max_gen_len", train.max_gen_len),
      MTRZ_SIZE("ppo_epochs", train.ppo_epochs),
      MTRZ_U64("seed", train.seed),
      Setting{"aggregation",
              [](ExperimentConfig& c, std::string_view v) {
                if (v == "sequence-mean") {
                  c.train.aggregation = TokenAggregation::SequenceMean;
                } else if (v == "pooled") {
                  c.train.aggregation = TokenAggregation::Pooled;
                } else {
                  bad_value("aggregation", v, "sequence-mean or pooled");
                }
              },
              [](const ExperimentConfig& c) {
                return std::string(c.train.aggregation == TokenAggregation::Pooled ? "pooled" : "sequence-mean");
              }},
      MTRZ_SIZE("steps", steps),
      Setting{"reward_mode",
              [](ExperimentConfig& c, std::string_view v) {
                c.reward.metric = wrap("reward_mode", v, [](std::string_view s) { return parse_metric_mode(s); });
              },
              [](const ExperimentConfig& c) { return std::string(to_string(c.reward.metric)); }},
      MTRZ_BOOL("thinking_required", reward.thinking_required),
      Setting{"lex_metric",
              [](ExperimentConfig& c, std::string_view v) {
                if (v == "bleu") {
                  c.lex_metric = LexMetricKind::Bleu;
                } else if (v == "chrf") {
                  c.lex_metric = LexMetricKind::Chrf;
                } else {
                  bad_value("lex_metric", v, "bleu or chrf");
                }
              },
              [](const ExperimentConfig& c) { return std::string(c.lex_metric == LexMetricKind::Chrf ? "chrf" : "bleu"); }},
      Setting{"corpus_source",
              [](ExperimentConfig& c, std::string_view v) {
                if (v == "generate") {
                  c.corpus.source = CorpusSource::Generate;
                } else if (v == "file") {
                  c.corpus.source = CorpusSource::File;
                } else {
                  bad_value("corpus_source", v, "generate or file");
                }
              },
              [](const ExperimentConfig& c) {
                return std::string(c.corpus.source == CorpusSource::File ? "file" : "generate");
              }},
      MTRZ_SIZE("corpus_concepts", corpus.spec.concepts),
      MTRZ_SIZE("corpus_synonyms", corpus.spec.synonyms),
      Setting{"corpus_reorder",
              [](ExperimentConfig& c, std::string_view v) {
                c.corpus.spec.reorder =
                    wrap("corpus_reorder", v, [](std::string_view s) { return parse_reorder_rule(s); });
              },
              [](const ExperimentConfig& c) { return std::string(to_string(c.corpus.spec.reorder)); }},
      MTRZ_STRING("corpus_src_lang", corpus.spec.src_lang),
      MTRZ_STRING("corpus_tgt_lang", corpus.spec.tgt_lang),
      MTRZ_SIZE("corpus_train_size", corpus.train_size),
      MTRZ_SIZE("corpus_test_size", corpus.test_size),
      MTRZ_SIZE("corpus_min_len", corpus.min_len),
      MTRZ_SIZE("corpus_max_len", corpus.max_len),
      MTRZ_U64("corpus_seed", corpus.seed),
      MTRZ_STRING("corpus_train_file", corpus.train_file),
      MTRZ_STRING("corpus_test_file", corpus.test_file),
      Setting{"corpus_format",
              [](ExperimentConfig& c, std::string_view v) {
                if (v == "auto") {
                  c.corpus.format.reset();
                } else {
                  c.corpus.format = wrap("corpus_format", v, [](std::string_view s) { return parse_file_format(s); });
                }
              },
              [](const ExperimentConfig& c) {
                if (!c.corpus.format) {
                  return std::string("auto");
                }
                return std::string(*c.corpus.format == FileFormat::Tsv ? "tsv" : "jsonl");
              }},
      MTRZ_SIZE("min_chars", corpus.min_chars),
      Setting{"scorer",
              [](ExperimentConfig& c, std::string_view v) {
                if (v == "mock") {
                  c.scorer = ScorerKind::Mock;
                } else if (v == "remote") {
                  c.scorer = ScorerKind::Remote;
                } else if (v == "none") {
                  c.scorer = ScorerKind::None;
                } else {
                  bad_value("scorer", v, "mock, remote or none");
                }
              },
              [](const ExperimentConfig& c) {
                switch (c.scorer) {
                  case ScorerKind::Remote:
                    return std::string("remote");
                  case ScorerKind::None:
                    return std::string("none");
                  case ScorerKind::Mock:
                    break;
                }
                return std::string("mock");
              }},
      MTRZ_STRING("scorer_endpoint", remote.endpoint),
      Setting{"scorer_timeout_ms",
              [](ExperimentConfig& c, std::string_view v) {
                c.remote.timeout = std::chrono::milliseconds(parse_u64("scorer_timeout_ms", v));
              },
              [](const ExperimentConfig& c) { return fmt(static_cast<std::uint64_t>(c.remote.timeout.count())); }},
      MTRZ_SIZE("scorer_max_in_flight", remote.max_in_flight),
      MTRZ_SIZE("model_width", model_width),
      MTRZ_SIZE("prior_steps", prior.steps),
      MTRZ_SIZE("prior_batch", prior.batch),
      MTRZ_DOUBLE("prior_learning_rate", prior.learning_rate),
      MTRZ_DOUBLE("prior_corruption", prior.corruption),
      MTRZ_STRING("log_path", log_path),
      MTRZ_BOOL("log_wall_time", log_wall_time),
      MTRZ_STRING("checkpoint_dir", checkpoint_dir),
      MTRZ_SIZE("checkpoint_interval", checkpoint_interval),
      MTRZ_SIZE("eval_interval", eval_interval),
      MTRZ_DOUBLE("eval_temperature", eval.temperature),
      MTRZ_BOOL("eval_greedy", eval.greedy),
      MTRZ_U64("eval_seed", eval.seed),
      MTRZ_SIZE("eval_max_gen_len", eval.max_gen_len),
  };
  return table;
}

#undef MTRZ_SIZE
#undef MTRZ_U64
#undef MTRZ_DOUBLE
#undef MTRZ_BOOL
#undef MTRZ_STRING

const Setting& find_setting(std::string_view key) {
  for (const auto& s : settings()) {
    if (s.key == key) {
      return s;
    }
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) {
    return {};
  }
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

void require(bool ok, const std::string& message) {
  if (!ok) {
    throw ConfigError(message);
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  try {
    train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  require(steps >= 1, "steps: must be at least 1");
  require(model_width >= 1, "model_width: must be at least 1");
  require(prior.batch >= 1, "prior_batch: must be at least 1");
  require(prior.learning_rate > 0.0, "prior_learning_rate: must be positive");
  require(prior.corruption >= 0.0 && prior.corruption <= 1.0, "prior_corruption: must lie in [0, 1]");
  require(eval.temperature > 0.0, "eval_temperature: must be positive");
  require(eval.max_gen_len >= 1, "eval_max_gen_len: must be at least 1");
  require(!log_path.empty(), "log_path: must not be empty");
  require(!checkpoint_dir.empty(), "checkpoint_dir: must not be empty");
  require(checkpoint_interval >= 1, "checkpoint_interval: must be at least 1");
  if (corpus.source == CorpusSource::Generate) {
    require(corpus.train_file.empty(), "corpus_train_file: set while corpus_source = generate");
    require(corpus.test_file.empty(), "corpus_test_file: set while corpus_source = generate");
    try {
      corpus.spec.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    require(corpus.train_size >= 1, "corpus_train_size: must be at least 1");
    require(corpus.min_len >= 1 && corpus.min_len <= corpus.max_len, "corpus_min_len: must lie in [1, corpus_max_len]");
  } else {
    require(!corpus.train_file.empty(), "corpus_train_file: required when corpus_source = file");
    require(scorer != ScorerKind::Mock, "scorer: the mock scorer needs a generated corpus lexicon");
  }
  if (scorer == ScorerKind::Remote) {
    require(!remote.endpoint.empty(), "scorer_endpoint: required when scorer = remote");
    require(remote.max_in_flight >= 1, "scorer_max_in_flight: must be at least 1");
    require(remote.timeout.count() > 0, "scorer_timeout_ms: must be positive");
  }
  if (reward.metric != MetricMode::Lex) {
    require(scorer != ScorerKind::None, "scorer: reward_mode " + std::string(to_string(reward.metric)) +
                                            " needs a semantic scorer");
  }
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> out;
    for (const auto& s : settings()) {
      out.push_back(s.key);
    }
    return out;
  }();
  return keys;
}

void apply_setting(ExperimentConfig& config, std::string_view key, std::string_view value) {
  find_setting(key).set(config, trim(value));
}

std::string get_setting(const ExperimentConfig& config, std::string_view key) { return find_setting(key).get(config); }

void apply_config_text(ExperimentConfig& config, std::string_view text, const std::string& origin) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = std::min(text.find('\n', pos), text.size());
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) {
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    try {
      apply_setting(config, trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void apply_config_file(ExperimentConfig& config, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ConfigError("config: cannot read " + path.string());
  }
  std::ostringstream text;
  text << in.rdbuf();
  apply_config_text(config, text.str(), path.string());
}

void apply_environment(ExperimentConfig& config) {
  if (const char* endpoint = std::getenv(kScorerEndpointEnv); endpoint != nullptr && *endpoint != '\0') {
    config.remote.endpoint = endpoint;
  }
}

std::string to_config_text(const ExperimentConfig& config) {
  std::string out;
  for (const auto& s : settings()) {
    out += s.key + " = " + s.get(config) + "\n";
  }
  return out;
}

ExperimentConfig resolve_config(const std::optional<std::filesystem::path>& file,
                                const std::vector<std::pair<std::string, std::string>>& overrides) {
  ExperimentConfig config;
  if (file) {
    apply_config_file(config, *file);
  }
  apply_environment(config);
  for (const auto& [key, value] : overrides) {
    apply_setting(config, key, value);
  }
  return config;
}

}  // namespace mtrz
