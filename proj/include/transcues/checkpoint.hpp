#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "transcues/tensor.hpp"

namespace transcues {

inline constexpr char kCheckpointMagic[] = "TRANSCUES1";

// Everything needed to resume training bit-for-bit: the resolved config,
// parameters and running statistics, optimizer moments, the step counter and
// the sampler state.
struct Checkpoint {
  std::string config_text;
  std::int64_t step = 0;
  std::string rng_state;                 // textual std::mt19937_64 state
  std::vector<std::int64_t> epoch_order; // sample order of the current epoch
  std::int64_t epoch_cursor = 0;
  std::vector<std::pair<std::string, Tensor<float>>> parameters;
  std::vector<std::pair<std::string, Tensor<float>>> buffers;
  std::int64_t optimizer_steps = 0;
  std::vector<Tensor<float>> first_moments;
  std::vector<Tensor<float>> second_moments;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
// IoError on a missing file, a wrong magic header, or truncation.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace transcues
