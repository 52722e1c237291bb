#include "mtrz/optimizer.hpp"

#include <cmath>

namespace mtrz {

AdamState AdamState::zeros_like(const PolicyParams& params) {
  AdamState state;
  for (const auto& block : params.blocks()) {
    state.m.emplace_back(block.size(), 0.0);
    state.v.emplace_back(block.size(), 0.0);
  }
  return state;
}

void optimizer_update(PolicyParams& params, AdamState& state, double learning_rate, const AdamConfig& config) {
  auto& blocks = params.blocks();
  if (state.m.size() != blocks.size() || state.v.size() != blocks.size()) {
    throw std::invalid_argument("optimizer state does not match parameter blocks");
  }
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    if (state.m[b].size() != blocks[b].size() || state.v[b].size() != blocks[b].size()) {
      throw std::invalid_argument("optimizer state shape mismatch for block '" + blocks[b].name + "'");
    }
  }
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("learning_rate: must be positive and finite");
  }

  const std::uint64_t step = state.step + 1;
  const double correction1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
  const double correction2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));

  std::vector<std::vector<double>> m = state.m;
  std::vector<std::vector<double>> v = state.v;
  std::vector<std::vector<double>> next(blocks.size());
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto& block = blocks[b];
    next[b].resize(block.size());
    for (std::size_t i = 0; i < block.size(); ++i) {
      const double g = block.grad[i];
      m[b][i] = (config.beta1 * m[b][i]) + ((1.0 - config.beta1) * g);
      v[b][i] = (config.beta2 * v[b][i]) + ((1.0 - config.beta2) * g * g);
      const double m_hat = m[b][i] / correction1;
      const double v_hat = v[b][i] / correction2;
      const double updated = block.value[i] - (learning_rate * m_hat / (std::sqrt(v_hat) + config.eps));
      if (!std::isfinite(updated)) {
        throw NumericalError("non-finite optimizer update in parameter block '" + block.name + "'");
      }
      next[b][i] = updated;
    }
  }
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    blocks[b].value = std::move(next[b]);
  }
  state.m = std::move(m);
  state.v = std::move(v);
  state.step = step;
}

}  // namespace mtrz
