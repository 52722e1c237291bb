#pragma once

#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtrz/experiment.hpp"

namespace mtrz {

// Keys of one log line, in output order. Absent optionals are written as null.
const std::vector<std::string>& step_metrics_keys();
nlohmann::ordered_json metrics_to_json(const StepMetrics& metrics);
StepMetrics metrics_from_json(const nlohmann::json& line);

// Appends one JSON object per line and flushes after each one; step must increase.
class MetricsLogger {
 public:
  // Starts a fresh log, or keeps the lines of an existing log up to `keep_through`.
  MetricsLogger(const std::filesystem::path& path, std::optional<std::uint64_t> keep_through);
  void write(const StepMetrics& metrics);

 private:
  std::ofstream out_;
  std::uint64_t last_step_ = 0;
};

// Corpus, vocabulary, scorers and reward engine assembled from a config.
struct ExperimentContext {
  Corpus corpus;
  std::unique_ptr<Vocabulary> vocab;
  std::unique_ptr<SemanticScorer> scorer;  // null when scorer = none
  std::unique_ptr<RewardEngine> engine;
};
ExperimentContext build_context(const ExperimentConfig& config);

std::filesystem::path checkpoint_file(const std::filesystem::path& dir, std::uint64_t step);

struct TrainOptions {
  std::optional<std::filesystem::path> resume;
  std::ostream* progress = nullptr;
};

struct TrainSummary {
  std::uint64_t final_step = 0;
  std::optional<EvalReport> initial_eval;  // fresh runs with a test split only
  std::optional<EvalReport> final_eval;
  std::filesystem::path final_checkpoint;
};

// Fresh runs fit the base prior, save it as step 0 (it is also the KL reference),
// then run GRPO steps, logging each one and checkpointing on the interval and at
// the end. Resumed runs load the reference from step 0 of the same directory.
TrainSummary cmd_train(const ExperimentConfig& config, const TrainOptions& options = {});

// Rejects a checkpoint whose vocabulary hash differs from the corpus vocabulary.
EvalReport cmd_eval(const ExperimentConfig& config, const std::filesystem::path& checkpoint);
nlohmann::ordered_json eval_report_to_json(const EvalReport& report);

// The full breakdown of one response. Lex and Mix require a reference.
nlohmann::ordered_json cmd_score(const ExperimentConfig& config, const std::string& src, const std::string& trans,
                                 const std::optional<std::string>& ref);

struct GeneratedFiles {
  std::filesystem::path train;
  std::filesystem::path test;
};
// Writes <prefix>.train.jsonl and <prefix>.test.jsonl.
GeneratedFiles cmd_generate_corpus(const ExperimentConfig& config, const std::string& prefix);

}  // namespace mtrz
