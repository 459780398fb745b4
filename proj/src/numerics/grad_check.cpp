#include "vqamask/numerics/grad_check.hpp"

#include <cmath>
#include <cstring>
#include <map>
#include <vector>

#include "vqamask/error.hpp"
#include "vqamask/numerics/tape.hpp"

namespace vqamask::nn {

double gradient_error(double analytic, double numeric, double absolute_below) {
  const double diff = std::abs(analytic - numeric);
  if (std::abs(analytic) < absolute_below) return diff;
  return diff / std::abs(analytic);
}

GradCheckReport grad_check(const LossFn& loss_fn, ParamSet& params, const GradCheckOptions& options) {
  if (!(options.step > 0.0)) fail(ErrorCode::InvalidArgument, "grad_check step must be positive");

  // Analytic pass.
  std::map<std::string, std::vector<double>, std::less<>> analytic;
  {
    params.zero_grad();
    Tape tape;
    Tape::Scope scope(tape);
    Tensor loss = loss_fn(params);
    tape.backward(loss);
    for (const auto& [name, t] : params.entries())
      analytic[name] = t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                    : std::vector<double>(t.numel(), 0.0);
  }

  const Tensor base = loss_fn(params);
  const Tensor again = loss_fn(params);
  const double b0 = base.item(), b1 = again.item();
  if (std::memcmp(&b0, &b1, sizeof(double)) != 0 || !(base.item_extended() == again.item_extended()))
    fail(ErrorCode::NonDeterministicLoss, "loss differs between two evaluations at identical parameters");

  GradCheckReport report;
  report.tolerance = options.tolerance;
  for (const auto& name : params.names()) {
    if (params.is_frozen(name) && !options.include_frozen) continue;
    Tensor& t = params.at(name);
    const auto& grads = analytic.at(name);
    ParamCheck check{name, t.numel()};
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double original = t.values()[i];
      const double hi = original + options.step;
      const double lo = original - options.step;
      t.mutable_values()[i] = hi;
      const long double up = loss_fn(params).item_extended();
      t.mutable_values()[i] = lo;
      const long double down = loss_fn(params).item_extended();
      t.mutable_values()[i] = original;
      // divide by the step actually taken after rounding θ ± h
      const double numeric = static_cast<double>((up - down) / (static_cast<long double>(hi) - lo));
      const double err = gradient_error(grads[i], numeric, options.absolute_below);
      if (!(err <= check.max_error)) {  // NaN propagates as a failure
        check.max_error = err;
        check.worst_index = i;
        check.analytic = grads[i];
        check.numeric = numeric;
      }
    }
    report.scalars_checked += t.numel();
    if (!(check.max_error <= report.max_error)) report.max_error = check.max_error;
    report.params.push_back(std::move(check));
  }
  return report;
}

}  // namespace vqamask::nn
