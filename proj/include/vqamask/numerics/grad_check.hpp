#pragma once

#include <functional>
#include <string>
#include <vector>

#include "vqamask/numerics/param_set.hpp"

namespace vqamask::nn {

/// Scalar loss as a function of the parameters. Must be deterministic. When a
/// Tape::Scope is active the function is expected to build its graph on it.
using LossFn = std::function<Tensor(const ParamSet&)>;

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-5;
  /// Below this analytic magnitude the absolute error is reported instead.
  double absolute_below = 1e-6;
  /// Also check frozen entries.
  bool include_frozen = false;
};

struct ParamCheck {
  std::string name;
  std::size_t count = 0;
  double max_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;  // at worst_index
  double numeric = 0.0;   // at worst_index
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  double max_error = 0.0;
  double tolerance = 0.0;
  std::size_t scalars_checked = 0;
  bool passed() const { return max_error < tolerance; }
};

/// Error metric used by grad_check: relative when |analytic| >= absolute_below.
double gradient_error(double analytic, double numeric, double absolute_below);

/// Compares the tape gradient of `loss_fn` with central differences
/// (loss(θ+h) − loss(θ−h)) / 2h for every checked scalar. Each scalar is
/// restored bit-exactly after its two evaluations. Throws NonDeterministicLoss
/// if two evaluations at the unperturbed point disagree.
GradCheckReport grad_check(const LossFn& loss_fn, ParamSet& params, const GradCheckOptions& options = {});

}  // namespace vqamask::nn
