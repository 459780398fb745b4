#pragma once

#include <functional>
#include <vector>

#include "vqamask/numerics/tensor.hpp"

namespace vqamask::nn {

/// Reverse-mode tape. Ops append their backward closure in execution order;
/// backward() replays them in exact reverse, so accumulation order is fixed.
///
/// Recording happens only while a Tape::Scope is alive on the current thread
/// and at least one op input requires a gradient.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::function<void()> backward) { entries_.push_back(std::move(backward)); }
  std::size_t size() const { return entries_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded closure in reverse.
  /// Gradients accumulate into existing buffers; callers zero parameters first.
  void backward(Tensor& loss);

  static Tape* active();

  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

 private:
  std::vector<std::function<void()>> entries_;
};

/// True when an op with these inputs must be recorded.
bool should_record(std::initializer_list<const Tensor*> inputs);

}  // namespace vqamask::nn
