#include "mtrz/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "mtrz/policy_model.hpp"

namespace mtrz {

std::vector<double> compute_advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) {
    throw std::invalid_argument("group_size: advantages need at least two rewards");
  }
  std::vector<double> out(rewards.size(), 0.0);
  const auto [lo, hi] = std::minmax_element(rewards.begin(), rewards.end());
  if (*lo == *hi) {
    return out;
  }
  double mean = 0.0;
  for (const double r : rewards) {
    mean += r;
  }
  mean /= static_cast<double>(rewards.size());
  double var = 0.0;
  for (const double r : rewards) {
    var += (r - mean) * (r - mean);
  }
  const double std_dev = std::sqrt(var / static_cast<double>(rewards.size()));
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    out[i] = (rewards[i] - mean) / std_dev;
  }
  return out;
}

double kl_approx(double logp_ref, double logp_theta) {
  if (!std::isfinite(logp_ref) || !std::isfinite(logp_theta)) {
    throw std::invalid_argument("kl_approx: non-finite log-probability");
  }
  const double d = logp_ref - logp_theta;
  if (d > 50.0) {
    std::ostringstream msg;
    msg << "kl_approx: ratio overflow (logp_ref " << logp_ref << ", logp_theta " << logp_theta << ")";
    throw NumericalError(msg.str());
  }
  return ad::kl_value(d);
}

ad::Var grpo_loss(ad::Tape& tape, std::span<const GroupLogprobs> groups, const LossConfig& config,
                  std::size_t group_count) {
  if (!(config.clip_eps > 0.0 && config.clip_eps < 1.0)) {
    throw std::invalid_argument("clip_eps: must lie in (0, 1)");
  }
  if (!(config.kl_beta >= 0.0)) {
    throw std::invalid_argument("kl_beta: must be nonnegative");
  }
  if (group_count == 0) {
    group_count = groups.size();
  }
  if (group_count == 0 || group_count < groups.size()) {
    throw std::invalid_argument("grpo_loss: invalid group count");
  }
  const bool use_kl = config.kl_beta > 0.0;

  std::vector<ad::Var> group_objectives;
  std::vector<ad::Var> kl_terms;
  for (const auto& g : groups) {
    const std::size_t n = g.advantages.size();
    if (g.theta.size() != n || g.old_logp.size() != n || (use_kl && g.ref_logp.size() != n)) {
      throw std::invalid_argument("grpo_loss: group sizes are misaligned");
    }
    std::vector<ad::Var> per_sequence;
    std::vector<ad::Var> pooled;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& theta = g.theta[i];
      if (theta.empty() || g.old_logp[i].size() != theta.size() ||
          (use_kl && g.ref_logp[i].size() != theta.size())) {
        throw std::invalid_argument("grpo_loss: log-probabilities misaligned with trajectory " + std::to_string(i));
      }
      const double a = g.advantages[i];
      std::vector<ad::Var> surrogates;
      surrogates.reserve(theta.size());
      for (std::size_t t = 0; t < theta.size(); ++t) {
        const ad::Var ratio = tape.exp(tape.add_scalar(theta[t], -g.old_logp[i][t]));
        const ad::Var clipped = tape.clamp(ratio, 1.0 - config.clip_eps, 1.0 + config.clip_eps);
        surrogates.push_back(tape.minimum(tape.scale(ratio, a), tape.scale(clipped, a)));
        if (use_kl) {
          const double d = g.ref_logp[i][t] - tape.scalar_value(theta[t]);
          if (d > 50.0) {
            throw NumericalError("kl_approx: ratio overflow in trajectory " + std::to_string(i));
          }
          kl_terms.push_back(tape.kl_estimate(theta[t], g.ref_logp[i][t]));
        }
      }
      if (config.aggregation == TokenAggregation::SequenceMean) {
        per_sequence.push_back(tape.mean(surrogates));
      } else {
        pooled.insert(pooled.end(), surrogates.begin(), surrogates.end());
      }
    }
    if (n == 0) {
      throw std::invalid_argument("grpo_loss: empty group");
    }
    group_objectives.push_back(config.aggregation == TokenAggregation::SequenceMean ? tape.mean(per_sequence)
                                                                                    : tape.mean(pooled));
  }

  ad::Var objective = group_objectives.empty()
                          ? tape.scalar(0.0)
                          : tape.scale(tape.sum(group_objectives), 1.0 / static_cast<double>(group_count));
  if (use_kl && !kl_terms.empty()) {
    const ad::Var kl = tape.mean(kl_terms);
    objective = tape.sub(objective, tape.scale(kl, config.kl_beta));
  }
  return tape.scale(objective, -1.0);
}

}  // namespace mtrz
