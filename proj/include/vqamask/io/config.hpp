#pragma once

// Run configuration as a flat JSON object. Precedence is CLI flag > file >
// built-in default; every key is optional and unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <string>

#include "vqamask/trainer.hpp"

namespace vqamask::io {

struct RunConfig {
  model::ModelConfig model;
  trainer::TrainConfig train;
  trainer::PretrainConfig pretrain{.steps = 500};
  int corpus_count = 200;
  int corpus_canvas = 64;
  std::uint64_t corpus_seed = 2024;
  double threshold = 0.5;
  std::string manifest;  // training data; empty means the synthetic corpus
};

/// Overlays the keys of a JSON object onto `config`. Throws InvalidArgument
/// on unknown keys or wrongly typed values.
void apply_json(RunConfig& config, const std::string& json_text);
RunConfig load_config(const std::filesystem::path& path);
std::string to_json(const RunConfig& config);

}  // namespace vqamask::io
