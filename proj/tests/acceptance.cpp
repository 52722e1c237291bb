// Runs every acceptance criterion and prints one PASS/FAIL line per criterion.
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mtrz/harness.hpp"
#include "mtrz/checkpoint.hpp"
#include "mtrz/lexical_metrics.hpp"
#include "mtrz/rng.hpp"
#include "support.hpp"

using namespace mtrz;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Collects failed checks so a criterion reports all of them at once.
struct Checker {
  std::vector<std::string> failures;
  void check(bool ok, const std::string& what) {
    if (!ok) {
      failures.push_back(what);
    }
  }
  Outcome outcome(std::string detail) const {
    if (!failures.empty()) {
      detail += "; failed: " + failures.front();
      if (failures.size() > 1) {
        detail += " (+" + std::to_string(failures.size() - 1) + " more)";
      }
    }
    return {failures.empty(), detail};
  }
};

std::string fmt(double v, int precision = 3) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(precision);
  s << v;
  return s.str();
}

class CountingScorer final : public SemanticScorer {
 public:
  explicit CountingScorer(double value) : value_(value) {}
  double score(const ScoreRequest&) override {
    ++calls;
    return value_;
  }
  int calls = 0;

 private:
  double value_;
};

// 1. Reward formula
Outcome reward_formula() {
  const auto started = Clock::now();
  Checker c;
  const PromptInstance inst{"Src", "Tgt", "s1 s2 s3 s4", std::string("t1a t2a t3a t4a")};
  const std::vector<std::pair<std::string, bool>> responses{
      {"<think>a</think><translate>t1a t2a</translate>", true},
      {"<translate>t1a t2a</translate>", false},
      {"<think>a</think>t1a t2a", false},
      {"", false},
  };
  std::size_t cases = 0;
  for (const auto& [text, ok] : responses) {
    for (const auto mode : {MetricMode::Lex, MetricMode::Sem, MetricMode::Mix}) {
      for (const double v : {0.0, 0.5, 1.0}) {
        int lex_calls = 0;
        CountingScorer sem(v);
        const LexicalMetric lex = [&](std::string_view, std::string_view) {
          ++lex_calls;
          return v;
        };
        const RewardEngine engine({mode, true}, lex, &sem);
        const auto b = engine.score(inst, text);
        ++cases;
        const std::string tag = std::string(to_string(mode)) + " v=" + fmt(v, 1) + (ok ? " ok" : " bad");
        if (!ok) {
          c.check(b.r == -3.0, tag + ": r != -3");
          c.check(b.s_format == -1 && !b.s_metric, tag + ": metric present on bad format");
          c.check(lex_calls == 0 && sem.calls == 0, tag + ": scorer invoked on bad format");
        } else {
          const double s = mode == MetricMode::Mix ? 2.0 * v : v;
          c.check(b.r == 1.0 + s, tag + ": r != 1 + S_metric");
          c.check(lex_calls == (mode == MetricMode::Sem ? 0 : 1), tag + ": lexical call count");
          c.check(sem.calls == (mode == MetricMode::Lex ? 0 : 1), tag + ": semantic call count");
        }
      }
    }
  }
  // Ranges over random responses with the real metrics.
  LanguageSpec spec;
  MockSynonymScorer mock(spec.lexicon());
  const auto corpus = generate_corpus(spec, 50, 0, 4, 8, 5);
  Rng rng(1);
  const std::vector<std::string> pieces{"<think>", "</think>", "<translate>", "</translate>", "t1a", "t2b", "t3a", " "};
  for (const auto mode : {MetricMode::Lex, MetricMode::Sem, MetricMode::Mix}) {
    const RewardEngine engine({mode, true}, bleu_metric(), &mock);
    const double hi = mode == MetricMode::Mix ? 3.0 : 2.0;
    for (const auto& inst2 : corpus.train) {
      for (int k = 0; k < 20; ++k) {
        std::string text;
        if (rng.bernoulli(0.5)) {
          text = "<think>x</think><translate>" + *inst2.ref_text + "</translate>";
          if (rng.bernoulli(0.5)) {
            text = "<think></think><translate>t" + std::to_string(rng.below(50)) + "b " + *inst2.ref_text + "</translate>";
          }
        } else {
          for (int p = 0; p < 6; ++p) {
            text += pieces[rng.below(pieces.size())];
          }
        }
        const double r = engine.score(inst2, text).r;
        c.check(r == -3.0 || (r >= 1.0 && r <= hi), "reward " + fmt(r) + " outside the allowed range");
        ++cases;
      }
    }
  }
  const double secs = seconds_since(started);
  c.check(secs < 1.0, "runtime " + fmt(secs) + " s >= 1 s");
  return c.outcome(std::to_string(cases) + " cases, " + fmt(secs) + " s");
}

// 2. Metric oracle equivalence against frozen sacreBLEU output.
Outcome metric_oracle() {
  const auto started = Clock::now();
  Checker c;
  std::ifstream in(fs::path(MTRZ_FIXTURE_DIR) / "metric_oracle.json");
  if (!in) {
    return {false, "fixture missing"};
  }
  const auto fx = nlohmann::json::parse(in);
  double worst_bleu = 0.0;
  std::vector<std::pair<TokenSequence, TokenSequence>> bleu_pairs;
  for (const auto& k : fx["sentence_bleu"]) {
    const auto h = k["hyp"].get<TokenSequence>();
    const auto r = k["ref"].get<TokenSequence>();
    worst_bleu = std::max(worst_bleu, std::abs(sentence_bleu(h, r) - k["sentence_bleu"].get<double>()));
    bleu_pairs.emplace_back(h, r);
  }
  double worst_corpus = 0.0;
  for (const auto& k : fx["corpus_bleu"]) {
    std::vector<std::pair<TokenSequence, TokenSequence>> subset;
    for (const auto& i : k["indices"]) {
      subset.push_back(bleu_pairs.at(i.get<std::size_t>()));
    }
    worst_corpus = std::max(worst_corpus, std::abs(corpus_bleu(subset) - k["corpus_bleu"].get<double>()));
  }
  double worst_chrf = 0.0;
  std::vector<std::pair<std::string, std::string>> chrf_pairs;
  for (const auto& k : fx["chrf"]) {
    const auto h = k["hyp"].get<std::string>();
    const auto r = k["ref"].get<std::string>();
    worst_chrf = std::max(worst_chrf, std::abs(chrf(h, r) - k["chrf"].get<double>()));
    chrf_pairs.emplace_back(h, r);
  }
  const double corpus_chrf_err = std::abs(corpus_chrf(chrf_pairs) - fx["chrf_corpus"].get<double>());
  c.check(fx["sentence_bleu"].size() >= 200, "fewer than 200 BLEU pairs");
  c.check(fx["chrf"].size() >= 200, "fewer than 200 chrF pairs");
  c.check(worst_bleu < 1e-6, "sentence BLEU error " + std::to_string(worst_bleu));
  c.check(worst_corpus < 1e-6, "corpus BLEU error " + std::to_string(worst_corpus));
  c.check(worst_chrf < 1e-6, "chrF error " + std::to_string(worst_chrf));
  c.check(corpus_chrf_err < 1e-6, "corpus chrF error " + std::to_string(corpus_chrf_err));
  const double secs = seconds_since(started);
  c.check(secs < 10.0, "runtime " + fmt(secs) + " s");
  std::ostringstream d;
  d << bleu_pairs.size() << " BLEU and " << chrf_pairs.size() << " chrF pairs, max abs error "
    << std::max({worst_bleu, worst_corpus, worst_chrf, corpus_chrf_err}) << ", " << fmt(secs) << " s";
  return c.outcome(d.str());
}

// 3. Gradient correctness.
Outcome gradients() {
  const auto started = Clock::now();
  Checker c;
  double worst = 0.0;
  std::size_t checked = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto params = mtrz::testing::random_policy(12 + seed, 3 + (seed % 3), mix_seed(seed, 0xACC), 0.5);
    const std::vector<std::pair<std::string, mtrz::testing::LossBuilder>> losses{
        {"quadratic", mtrz::testing::quadratic_loss},
        {"sequence NLL", mtrz::testing::nll_loss(params.vocab_size(), seed)},
        {"GRPO", mtrz::testing::grpo_micro_batch_loss(params, seed)},
    };
    for (const auto& [name, build] : losses) {
      const auto g = mtrz::testing::check_gradients(params, build, 1e-4);
      worst = std::max(worst, g.max_rel_error);
      checked += g.checked;
      c.check(g.max_rel_error < 1e-4, name + " seed " + std::to_string(seed) + " rel error " +
                                          std::to_string(g.max_rel_error));
    }
  }
  const double secs = seconds_since(started);
  c.check(secs < 60.0, "runtime " + fmt(secs) + " s");
  std::ostringstream d;
  d << "3 losses x 5 seeds, " << checked << " partials, max rel error " << worst << ", " << fmt(secs) << " s";
  return c.outcome(d.str());
}

// 4. GRPO math.
Outcome grpo_math() {
  Checker c;
  Rng rng(4);
  for (int t = 0; t < 2000; ++t) {
    std::vector<double> r(static_cast<std::size_t>(rng.between(2, 12)));
    for (auto& x : r) {
      x = rng.bernoulli(0.2) ? -3.0 : (rng.bernoulli(0.3) ? 2.0 : 1.0 + rng.uniform());
    }
    if (rng.bernoulli(0.1)) {
      std::fill(r.begin(), r.end(), r.front());
    }
    const auto a = compute_advantages(r);
    const bool degenerate = *std::min_element(r.begin(), r.end()) == *std::max_element(r.begin(), r.end());
    double mean = 0.0;
    for (const double x : a) {
      mean += x;
    }
    mean /= static_cast<double>(a.size());
    double var = 0.0;
    for (const double x : a) {
      var += (x - mean) * (x - mean);
    }
    const double sd = std::sqrt(var / static_cast<double>(a.size()));
    if (degenerate) {
      c.check(std::all_of(a.begin(), a.end(), [](double x) { return x == 0.0; }), "degenerate group not all zero");
    } else {
      c.check(std::abs(mean) < 1e-9 && std::abs(sd - 1.0) < 1e-9, "advantage mean/std off");
    }
    const double lp1 = rng.uniform(-15.0, 0.0);
    const double lp2 = rng.bernoulli(0.1) ? lp1 : rng.uniform(-15.0, 0.0);
    const double k = kl_approx(lp1, lp2);
    c.check(k >= 0.0 && ((k == 0.0) == (lp1 == lp2)), "kl_approx sign/equality");
  }

  // First-epoch ratios: the differentiable logprobs equal the sampling ones.
  double worst_ratio = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto params = mtrz::testing::random_policy(30, 8, seed, 0.4);
    const auto prompt = mtrz::testing::random_prompt(30, 5, seed);
    const auto traj = sample_response(params, prompt, 1.0, 24, seed);
    ad::Tape tape;
    const auto state = encode_prompt_state(tape, params, prompt);
    const auto vars = sequence_logprob_vars(tape, params, prompt, state, traj.output_tokens, 1.0);
    for (std::size_t t = 0; t < vars.size(); ++t) {
      worst_ratio = std::max(worst_ratio, std::abs(std::exp(tape.scalar_value(vars[t]) - traj.logprobs[t]) - 1.0));
    }
  }
  c.check(worst_ratio <= 1e-12, "first-epoch ratio deviates by " + std::to_string(worst_ratio));

  // Clip truth table on one token; the partner rollout has the opposite advantage.
  int branches = 0;
  for (const double rho : {1.5, 0.5}) {
    for (const double adv : {1.0, -1.0}) {
      ad::Tape tape;
      const auto theta = tape.scalar(std::log(rho));
      GroupLogprobs g;
      g.advantages = {adv, -adv};
      g.theta = {{theta}, {tape.scalar(0.0)}};
      g.old_logp = {{0.0}, {0.0}};
      const std::vector<GroupLogprobs> groups{g};
      const auto loss = grpo_loss(tape, groups, {.clip_eps = 0.2});
      tape.backward(loss);
      const bool clipped = (rho > 1.0) == (adv > 0.0);
      const double surrogate = clipped ? (rho > 1.0 ? 1.2 : 0.8) * adv : rho * adv;
      const double want_loss = -(surrogate - adv) / 2.0;
      const double want_grad = clipped ? 0.0 : -rho * adv / 2.0;
      const double got_grad = tape.adjoint(theta).front();
      c.check(tape.scalar_value(loss) == want_loss, "clip table loss rho=" + fmt(rho, 1) + " A=" + fmt(adv, 0));
      c.check(got_grad == want_grad, "clip table gradient rho=" + fmt(rho, 1) + " A=" + fmt(adv, 0));
      ++branches;
    }
  }
  std::ostringstream d;
  d << "2000 groups, max first-epoch |rho-1| " << worst_ratio << ", " << branches << " clip branches";
  return c.outcome(d.str());
}

// Desk-scale training runs.

struct RunResult {
  TrainSummary summary;
  std::vector<StepMetrics> log;
  std::string log_bytes;
  double seconds = 0.0;
  fs::path dir;
};

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

class Runs {
 public:
  Runs(fs::path config, fs::path work) : config_(std::move(config)), work_(std::move(work)) {}

  const RunResult& get(const std::string& name, const std::vector<std::pair<std::string, std::string>>& overrides) {
    if (const auto it = cache_.find(name); it != cache_.end()) {
      return it->second;
    }
    RunResult r;
    r.dir = work_ / name;
    fs::remove_all(r.dir);
    auto all = overrides;
    all.emplace_back("log_path", (r.dir / "train.jsonl").string());
    all.emplace_back("checkpoint_dir", (r.dir / "checkpoints").string());
    const auto config = resolve_config(config_, all);
    std::cerr << "[run " << name << "]" << std::endl;
    const auto started = Clock::now();
    r.summary = cmd_train(config, {.resume = std::nullopt, .progress = &std::cerr});
    r.seconds = seconds_since(started);
    r.log_bytes = read_bytes(config.log_path);
    std::istringstream lines(r.log_bytes);
    std::string line;
    while (std::getline(lines, line)) {
      r.log.push_back(metrics_from_json(nlohmann::json::parse(line)));
    }
    return cache_.emplace(name, std::move(r)).first->second;
  }

  ExperimentConfig config(const std::vector<std::pair<std::string, std::string>>& overrides) const {
    return resolve_config(config_, overrides);
  }

 private:
  fs::path config_;
  fs::path work_;
  std::map<std::string, RunResult> cache_;
};

using Overrides = std::vector<std::pair<std::string, std::string>>;

Overrides seeded(std::uint64_t seed, const std::string& mode, Overrides extra = {}) {
  extra.emplace_back("seed", std::to_string(seed));
  extra.emplace_back("reward_mode", mode);
  return extra;
}

// 5. Desk-scale run.
Outcome desk_run(Runs& runs) {
  Checker c;
  const auto& r = runs.get("lex_seed1", seeded(1, "lex"));
  const auto cfg = runs.config({});
  c.check(cfg.steps <= 2000, "more than 2000 steps");
  c.check(r.seconds <= 1800.0, "run took " + fmt(r.seconds, 0) + " s");
  std::optional<std::size_t> settle;
  for (std::size_t t = 0; t < r.log.size() && r.log[t].step <= 400; ++t) {
    if (r.log[t].format_error_rate >= 0.05) {
      continue;
    }
    bool holds = true;
    for (std::size_t s = t + 1; s < r.log.size(); ++s) {
      holds = holds && r.log[s].format_error_rate < 0.10;
    }
    if (holds) {
      settle = r.log[t].step;
      break;
    }
  }
  double max_after = 0.0;
  if (settle) {
    for (std::size_t s = *settle; s < r.log.size(); ++s) {
      max_after = std::max(max_after, r.log[s].format_error_rate);
    }
  }
  c.check(settle.has_value(), "format-error rate never settles below 0.05 with all later steps below 0.10");
  const double bleu0 = r.summary.initial_eval ? r.summary.initial_eval->bleu : 0.0;
  const double bleu1 = r.summary.final_eval ? r.summary.final_eval->bleu : 0.0;
  c.check(bleu1 - bleu0 >= 20.0, "BLEU gain " + fmt(bleu1 - bleu0, 2) + " < 20");
  std::ostringstream d;
  d << "(a) settled at step " << (settle ? std::to_string(*settle) : std::string("-")) << ", max after "
    << fmt(max_after) << "; (b) test BLEU " << fmt(bleu0, 2) << " -> " << fmt(bleu1, 2) << "; " << cfg.steps
    << " steps in " << fmt(r.seconds, 0) << " s";
  return c.outcome(d.str());
}

// 6. Lex vs Sem reward.
Outcome reward_selection(Runs& runs) {
  Checker c;
  int bleu_wins = 0;
  int sem_wins = 0;
  std::ostringstream d;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto& lex = runs.get("lex_seed" + std::to_string(seed), seeded(seed, "lex"));
    const auto& sem = runs.get("sem_seed" + std::to_string(seed), seeded(seed, "sem"));
    const auto& lf = *lex.summary.final_eval;
    const auto& sf = *sem.summary.final_eval;
    const bool bleu_ok = lf.bleu > sf.bleu;
    const bool sem_ok = sf.mean_sem.value_or(0.0) > lf.mean_sem.value_or(0.0);
    bleu_wins += bleu_ok ? 1 : 0;
    sem_wins += sem_ok ? 1 : 0;
    d << "seed " << seed << ": BLEU lex " << fmt(lf.bleu, 2) << " vs sem " << fmt(sf.bleu, 2) << ", mock-sem lex "
      << fmt(lf.mean_sem.value_or(0.0)) << " vs sem " << fmt(sf.mean_sem.value_or(0.0)) << "; ";
  }
  c.check(bleu_wins >= 2, "Lex BLEU strictly higher on only " + std::to_string(bleu_wins) + "/3 seeds");
  c.check(sem_wins >= 2, "Sem mock-semantic strictly higher on only " + std::to_string(sem_wins) + "/3 seeds");
  d << "BLEU wins " << bleu_wins << "/3, semantic wins " << sem_wins << "/3";
  return c.outcome(d.str());
}

// 7. KL ablation.
Outcome kl_ablation(Runs& runs) {
  Checker c;
  const Overrides shorter{{"steps", "400"}, {"eval_interval", "0"}};
  const auto& free = runs.get("kl0_seed1", seeded(1, "lex", shorter));
  auto with_kl = shorter;
  with_kl.emplace_back("kl_beta", "1.0");
  const auto& tied = runs.get("kl1_seed1", seeded(1, "lex", with_kl));
  const auto distance = [](const RunResult& r) {
    const auto ref = load_checkpoint(checkpoint_file(r.dir / "checkpoints", 0));
    const auto last = load_checkpoint(r.summary.final_checkpoint);
    return last.params.l2_distance(ref.params);
  };
  const double d0 = distance(free);
  const double d1 = distance(tied);
  c.check(d1 < d0, "L2 distance with beta=1 is not smaller");
  double min_kl = 0.0;
  double max_kl = 0.0;
  for (const auto* r : {&free, &tied}) {
    for (const auto& m : r->log) {
      c.check(m.mean_kl >= 0.0, "negative mean_kl at step " + std::to_string(m.step));
      min_kl = std::min(min_kl, m.mean_kl);
      max_kl = std::max(max_kl, m.mean_kl);
    }
  }
  std::ostringstream d;
  d << "400 steps: ||theta - ref|| beta=0 " << fmt(d0) << " vs beta=1 " << fmt(d1) << "; mean_kl in [" << min_kl
    << ", " << fmt(max_kl, 4) << "]";
  return c.outcome(d.str());
}

// 8. With/without thinking.
Outcome thinking_ablation(Runs& runs) {
  Checker c;
  const auto& with = runs.get("lex_seed1", seeded(1, "lex"));
  const auto& without = runs.get("nothink_seed1", seeded(1, "lex", {{"thinking_required", "false"}}));
  const double a = with.summary.final_eval->bleu;
  const double b = without.summary.final_eval->bleu;
  c.check(std::abs(a - b) <= 5.0, "BLEU difference " + fmt(std::abs(a - b), 2) + " > 5");
  return c.outcome("test BLEU with thinking " + fmt(a, 2) + ", without " + fmt(b, 2) + ", difference " +
                   fmt(std::abs(a - b), 2));
}

// 9. Determinism.
Outcome determinism(Runs& runs) {
  Checker c;
  const auto& first = runs.get("lex_seed1", seeded(1, "lex"));
  const auto& second = runs.get("lex_seed1_repeat", seeded(1, "lex"));
  c.check(!first.log_bytes.empty(), "empty log");
  c.check(first.log_bytes == second.log_bytes, "logs differ");
  const bool same_ck = read_bytes(first.summary.final_checkpoint) == read_bytes(second.summary.final_checkpoint);
  c.check(same_ck, "final checkpoints differ");
  return c.outcome(std::to_string(first.log.size()) + " log lines, " + std::to_string(first.log_bytes.size()) +
                   " bytes, identical logs and final checkpoints");
}

}  // namespace

int main(int argc, char** argv) {
  fs::path config = fs::path(MTRZ_SOURCE_DIR) / "configs" / "desk_scale.conf";
  fs::path work = fs::current_path() / "acceptance_runs";
  std::set<int> only;
  std::set<int> known_red;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--config" && i + 1 < argc) {
      config = argv[++i];
    } else if (arg == "--workdir" && i + 1 < argc) {
      work = argv[++i];
    } else if (arg == "--only" && i + 1 < argc) {
      only.insert(std::stoi(argv[++i]));
    } else if (arg == "--known-red" && i + 1 < argc) {
      known_red.insert(std::stoi(argv[++i]));
    } else {
      std::cerr << "usage: acceptance [--config FILE] [--workdir DIR] [--only N]... [--known-red N]...\n";
      return 2;
    }
  }
  Runs runs(config, work);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"reward formula", reward_formula},
      {"lexical metric oracle", metric_oracle},
      {"gradient correctness", gradients},
      {"GRPO math", grpo_math},
      {"desk-scale training run", [&] { return desk_run(runs); }},
      {"reward metric selection (Lex vs Sem)", [&] { return reward_selection(runs); }},
      {"KL ablation", [&] { return kl_ablation(runs); }},
      {"with/without thinking", [&] { return thinking_ablation(runs); }},
      {"determinism", [&] { return determinism(runs); }},
  };
  // A known-red criterion still prints FAIL; it only stops failing the exit code.
  // Exceptions always do.
  int failed = 0;
  int unexpected = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && only.count(id) == 0) {
      continue;
    }
    Outcome o;
    bool threw = false;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
      threw = true;
    }
    if (!o.pass) {
      ++failed;
      unexpected += (threw || known_red.count(id) == 0) ? 1 : 0;
    }
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << criteria[i].first << "): " << o.detail
              << std::endl;
  }
  std::cout << failed << " failed, " << unexpected << " not declared known-red" << std::endl;
  return unexpected == 0 ? 0 : 1;
}
