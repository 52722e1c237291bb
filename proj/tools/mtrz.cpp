#include <cstdio>
#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "mtrz/harness.hpp"

namespace {

struct ConfigFlags {
  std::string config_file;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "flat key = value config file")->check(CLI::ExistingFile);
    for (const auto& key : mtrz::config_keys()) {
      options[key] = app->add_option("--" + key, values[key])->group("Config overrides");
    }
  }

  mtrz::ExperimentConfig resolve() const {
    std::vector<std::pair<std::string, std::string>> overrides;
    for (const auto& [key, opt] : options) {
      if (opt->count() > 0) {
        overrides.emplace_back(key, values.at(key));
      }
    }
    std::optional<std::filesystem::path> file;
    if (!config_file.empty()) {
      file = config_file;
    }
    return mtrz::resolve_config(file, overrides);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GRPO translation-reward trainer on a synthetic language pair"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "run the base prior and GRPO training");
  ConfigFlags train_flags;
  train_flags.attach(train);
  std::string resume;
  train->add_option("--resume", resume, "checkpoint to continue from")->check(CLI::ExistingFile);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  ConfigFlags eval_flags;
  eval_flags.attach(eval);
  std::string checkpoint;
  eval->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);

  auto* score = app.add_subcommand("score", "print the reward breakdown of one response");
  ConfigFlags score_flags;
  score_flags.attach(score);
  std::string src;
  std::string trans;
  std::string ref;
  score->add_option("--src", src)->required();
  score->add_option("--trans", trans)->required();
  auto* ref_opt = score->add_option("--ref", ref);

  auto* gen = app.add_subcommand("generate-corpus", "write a synthetic corpus as JSONL");
  ConfigFlags gen_flags;
  gen_flags.attach(gen);
  std::string prefix;
  gen->add_option("--out", prefix, "writes <out>.train.jsonl and <out>.test.jsonl")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      const auto config = train_flags.resolve();
      mtrz::TrainOptions opts;
      opts.progress = &std::cerr;
      if (!resume.empty()) {
        opts.resume = resume;
      }
      const auto summary = mtrz::cmd_train(config, opts);
      nlohmann::ordered_json out;
      out["final_step"] = summary.final_step;
      out["final_checkpoint"] = summary.final_checkpoint.string();
      out["initial_eval"] = summary.initial_eval ? nlohmann::ordered_json(mtrz::eval_report_to_json(*summary.initial_eval))
                                                 : nlohmann::ordered_json(nullptr);
      out["final_eval"] = summary.final_eval ? nlohmann::ordered_json(mtrz::eval_report_to_json(*summary.final_eval))
                                             : nlohmann::ordered_json(nullptr);
      std::cout << out.dump(2) << '\n';
    } else if (eval->parsed()) {
      const auto report = mtrz::cmd_eval(eval_flags.resolve(), checkpoint);
      std::cout << mtrz::eval_report_to_json(report).dump(2) << '\n';
    } else if (score->parsed()) {
      const std::optional<std::string> maybe_ref = ref_opt->count() > 0 ? std::optional(ref) : std::nullopt;
      std::cout << mtrz::cmd_score(score_flags.resolve(), src, trans, maybe_ref).dump(2) << '\n';
    } else if (gen->parsed()) {
      const auto files = mtrz::cmd_generate_corpus(gen_flags.resolve(), prefix);
      std::cout << files.train.string() << '\n' << files.test.string() << '\n';
    }
  } catch (const mtrz::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
