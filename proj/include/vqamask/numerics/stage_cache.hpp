#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "vqamask/numerics/tape.hpp"
#include "vqamask/numerics/tensor.hpp"

namespace vqamask::nn {

/// Memoizes stage outputs of a forward pass keyed on the (uid, version) of
/// every tensor the stage reads. Used only for repeated tape-free
/// evaluations of one fixed input (finite differences): a stage is recomputed
/// only when one of its inputs or parameters has been written since.
///
/// While a tape is active nothing is cached, so backward graphs stay intact.
class StageCache {
 public:
  template <class F>
  Tensor get(const std::string& slot, const std::vector<Tensor>& deps, F&& compute) {
    if (Tape::active()) return compute();
    Key key;
    key.reserve(deps.size());
    for (const auto& d : deps) key.emplace_back(d.uid(), d.version());
    Entry& entry = entries_[slot];
    if (entry.value.defined() && entry.key == key) {
      ++hits_;
      return entry.value;
    }
    ++misses_;
    entry.key = std::move(key);
    entry.value = compute();
    return entry.value;
  }

  void clear() { entries_.clear(); }
  std::uint64_t hits() const { return hits_; }
  std::uint64_t misses() const { return misses_; }

 private:
  using Key = std::vector<std::pair<std::uint64_t, std::uint64_t>>;
  struct Entry {
    Key key;
    Tensor value;
  };
  std::unordered_map<std::string, Entry> entries_;
  std::uint64_t hits_ = 0;
  std::uint64_t misses_ = 0;
};

/// Runs `compute` through `cache` when one is given, directly otherwise.
template <class F>
Tensor cached(StageCache* cache, const std::string& slot, const std::vector<Tensor>& deps, F&& compute) {
  if (!cache) return compute();
  return cache->get(slot, deps, std::forward<F>(compute));
}

}  // namespace vqamask::nn
