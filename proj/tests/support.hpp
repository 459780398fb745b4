#pragma once

#include <cstdint>

#include "vqamask/image.hpp"
#include "vqamask/numerics/tensor.hpp"
#include "vqamask/rng.hpp"

namespace vqamask::testing {

inline nn::Tensor random_tensor(nn::Shape shape, std::uint64_t seed, double stddev = 1.0) {
  Rng rng(seed);
  nn::Tensor t(std::move(shape));
  for (auto& v : t.mutable_values()) v = rng.normal(0.0, stddev);
  return t;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// F1 of `pred` against `truth`; two empty masks score 1.
inline double f1_score(const BinaryMask& pred, const BinaryMask& truth) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred.values()[i] != 0, t = truth.values()[i] != 0;
    tp += p && t;
    fp += p && !t;
    fn += !p && t;
  }
  if (tp + fp + fn == 0) return 1.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

}  // namespace vqamask::testing
