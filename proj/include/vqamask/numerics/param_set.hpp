#pragma once

#include <functional>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "vqamask/numerics/tensor.hpp"

namespace vqamask::nn {

/// Named trainable tensors plus the set of names excluded from updates.
/// Iteration order is the lexicographic name order, which fixes every
/// reduction that walks the whole set.
class ParamSet {
 public:
  /// Registers `value` under `name` with requires_grad = true. Throws on duplicates.
  Tensor& add(const std::string& name, Tensor value);

  bool contains(std::string_view name) const;
  Tensor& at(std::string_view name);
  const Tensor& at(std::string_view name) const;

  void freeze(std::string_view name);
  void unfreeze(std::string_view name);
  /// Freezes (or unfreezes) every name starting with `prefix`.
  void freeze_prefix(std::string_view prefix, bool frozen = true);
  bool is_frozen(std::string_view name) const;
  const std::set<std::string, std::less<>>& frozen() const { return frozen_; }

  const std::map<std::string, Tensor, std::less<>>& entries() const { return params_; }
  std::vector<std::string> names() const;

  /// Sets requires_grad = !frozen on every entry so frozen weights skip
  /// gradient work; activations still propagate through them.
  void sync_requires_grad();

  std::size_t scalar_count(bool trainable_only = false) const;
  void zero_grad();

  /// Deep copy; the clone shares nothing with this set.
  ParamSet clone() const;

  /// Copies values (not gradients) of every name present in both sets.
  void assign_values_from(const ParamSet& other);

 private:
  std::map<std::string, Tensor, std::less<>> params_;
  std::set<std::string, std::less<>> frozen_;
};

}  // namespace vqamask::nn
