#pragma once

#include <cstdint>
#include <filesystem>

#include "mtrz/optimizer.hpp"
#include "mtrz/policy_model.hpp"

namespace mtrz {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint64_t vocab_hash = 0;
  PolicyParams params;
  AdamState adam;
  std::uint64_t step = 0;
};

// Layout, all integers and floats little-endian:
//   "MTRZ1" | u32 version | u64 vocab hash | u64 d | u64 V
//   f64 values of every parameter block in declared order
//   u64 adam step | f64 m per block | f64 v per block | u64 trainer step
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mtrz
