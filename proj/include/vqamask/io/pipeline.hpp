#pragma once

// Batch mask generation over a manifest. Records are independent; workers
// pull record indices from a shared counter and each record's outcome lands
// in its own slot, so files and the report do not depend on the thread count.

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "vqamask/io/manifest.hpp"

namespace vqamask::io {

struct RecordOutcome {
  std::size_t index = 0;  // position in the manifest's record list
  std::size_t line = 0;
  bool ok = false;
  std::string error;      // error name when !ok
  std::string message;
  int boxes = 0;
  int degenerate = 0;
  int inverted = 0;
};

struct GenmaskReport {
  std::vector<RecordOutcome> records;
  std::size_t failures = 0;
};

/// Reads each image, runs generate_mask with `seed` and writes the mask to the
/// record's resolved mask path. Per-record failures are collected, never thrown.
GenmaskReport run_genmask(const Manifest& manifest, std::uint64_t seed, int threads);

/// One line per failed record ("record <index> (line <n>): <Error>: ...") in index order.
void log_failures(const GenmaskReport& report, std::ostream& out);

/// Default worker count: VQAMASK_THREADS when it holds a positive integer, else 1.
int default_threads();

}  // namespace vqamask::io
