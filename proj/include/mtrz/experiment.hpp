#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mtrz/reward_engine.hpp"
#include "mtrz/semantic_scorer.hpp"
#include "mtrz/task_corpus.hpp"
#include "mtrz/trainer.hpp"

namespace mtrz {

enum class CorpusSource { Generate, File };
enum class ScorerKind { Mock, Remote, None };
enum class LexMetricKind { Bleu, Chrf };

struct CorpusConfig {
  CorpusSource source = CorpusSource::Generate;
  LanguageSpec spec;
  std::size_t train_size = 512;
  std::size_t test_size = 128;
  std::size_t min_len = 4;
  std::size_t max_len = 12;
  std::uint64_t seed = 7;
  std::string train_file;
  std::string test_file;  // optional; without it evaluation is skipped
  std::optional<FileFormat> format;  // inferred from the extension when absent
  std::size_t min_chars = 30;
};

struct ExperimentConfig {
  TrainConfig train;
  std::size_t steps = 2000;
  RewardMode reward;
  LexMetricKind lex_metric = LexMetricKind::Bleu;
  CorpusConfig corpus;
  ScorerKind scorer = ScorerKind::Mock;
  RemoteScorerConfig remote;
  std::size_t model_width = 64;
  BasePriorConfig prior;
  std::string log_path = "train.jsonl";
  bool log_wall_time = false;
  std::string checkpoint_dir = "checkpoints";
  std::size_t checkpoint_interval = 100;
  std::size_t eval_interval = 250;  // 0: evaluate only after the final step
  EvalOptions eval;

  // Throws ConfigError naming the offending field.
  void validate() const;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr const char* kScorerEndpointEnv = "MTRZ_SCORER_ENDPOINT";

// Every settable key, in canonical order.
const std::vector<std::string>& config_keys();
// Throws ConfigError for unknown keys or unparsable values, naming the key.
void apply_setting(ExperimentConfig& config, std::string_view key, std::string_view value);
std::string get_setting(const ExperimentConfig& config, std::string_view key);

// Flat "key = value" lines; '#' starts a comment; blank lines are ignored.
void apply_config_text(ExperimentConfig& config, std::string_view text, const std::string& origin = "config");
void apply_config_file(ExperimentConfig& config, const std::filesystem::path& path);
// Applies MTRZ_SCORER_ENDPOINT when set and non-empty.
void apply_environment(ExperimentConfig& config);
// One "key = value" line per key; parses back to an identical config.
std::string to_config_text(const ExperimentConfig& config);

// Defaults, then the file, then the environment, then overrides in order.
ExperimentConfig resolve_config(const std::optional<std::filesystem::path>& file,
                                const std::vector<std::pair<std::string, std::string>>& overrides);

}  // namespace mtrz
