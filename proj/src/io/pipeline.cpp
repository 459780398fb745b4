#include "vqamask/io/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdlib>
#include <cstring>
#include <thread>

#include "vqamask/error.hpp"
#include "vqamask/io/netpbm.hpp"
#include "vqamask/maskgen.hpp"

namespace vqamask::io {

namespace {

void process(const Manifest& manifest, std::size_t index, std::uint64_t seed, RecordOutcome& out) {
  const ManifestRecord& record = manifest.records[index];
  out.index = index;
  out.line = record.line;
  out.boxes = static_cast<int>(record.boxes.size());
  try {
    if (record.mask.empty()) fail(ErrorCode::InvalidArgument, "record has no mask output path");
    const Image image = read_image(manifest.resolve(record.image));
    std::vector<maskgen::InstanceOutcome> outcomes;
    const BinaryMask mask = maskgen::generate_mask(image, record.boxes, seed, &outcomes);
    write_mask(manifest.resolve(record.mask), mask);
    for (const auto& o : outcomes) {
      out.degenerate += o.degenerate ? 1 : 0;
      out.inverted += o.inverted ? 1 : 0;
    }
    out.ok = true;
  } catch (const Error& e) {
    out.error = std::string(e.name());
    out.message = e.what();
  } catch (const std::exception& e) {
    out.error = "RuntimeError";
    out.message = e.what();
  }
}

}  // namespace

GenmaskReport run_genmask(const Manifest& manifest, std::uint64_t seed, int threads) {
  if (threads < 1) fail(ErrorCode::InvalidArgument, "thread count must be positive");
  GenmaskReport report;
  const std::size_t n = manifest.records.size();
  report.records.resize(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) process(manifest, i, seed, report.records[i]);
  };
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), std::max<std::size_t>(n, 1));
  std::vector<std::jthread> pool;
  for (std::size_t t = 1; t < workers; ++t) pool.emplace_back(worker);
  worker();
  pool.clear();  // joins
  report.failures = static_cast<std::size_t>(
      std::count_if(report.records.begin(), report.records.end(), [](const RecordOutcome& r) { return !r.ok; }));
  return report;
}

void log_failures(const GenmaskReport& report, std::ostream& out) {
  for (const auto& r : report.records)
    if (!r.ok) out << "record " << r.index << " (line " << r.line << "): " << r.message << '\n';
}

int default_threads() {
  const char* env = std::getenv("VQAMASK_THREADS");
  if (env == nullptr) return 1;
  int value = 0;
  const char* end = env + std::strlen(env);
  const auto [ptr, ec] = std::from_chars(env, end, value);
  if (ec != std::errc() || ptr != end || value < 1) return 1;
  return value;
}

}  // namespace vqamask::io
