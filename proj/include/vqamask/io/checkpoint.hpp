#pragma once

// Flat named-tensor container:
//   "VQMK" | u32 version | u64 metadata bytes | metadata (JSON text)
//   | u64 tensor count | per tensor: u32 name bytes, name, u8 frozen,
//     u32 rank, u64 dims[rank], f64 values[numel] (row-major, little-endian)

#include <filesystem>
#include <string>

#include "vqamask/numerics/param_set.hpp"

namespace vqamask::io {

struct Checkpoint {
  nn::ParamSet params;
  std::string metadata;
};

/// Throws WriteFailure.
void save_checkpoint(const std::filesystem::path& path, const nn::ParamSet& params, const std::string& metadata);
/// Throws Unreadable on missing files, bad magic or truncation.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace vqamask::io
