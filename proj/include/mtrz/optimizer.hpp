#pragma once

#include <cstdint>
#include <vector>

#include "mtrz/policy_model.hpp"

namespace mtrz {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First and second moments per parameter block, in PolicyParams block order.
struct AdamState {
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  static AdamState zeros_like(const PolicyParams& params);
  bool operator==(const AdamState&) const = default;
};

// One bias-corrected Adam step using the gradients stored in `params`.
// Parameters are untouched when any update would be non-finite (NumericalError).
void optimizer_update(PolicyParams& params, AdamState& state, double learning_rate, const AdamConfig& config = {});

}  // namespace mtrz
