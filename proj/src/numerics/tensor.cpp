#include "vqamask/numerics/tensor.hpp"

#include <algorithm>
#include <atomic>

#include "vqamask/error.hpp"
#include "vqamask/numerics/tape.hpp"

namespace vqamask::nn {

namespace {

std::uint64_t next_uid() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

thread_local Tape* g_active_tape = nullptr;

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape shape, bool requires_grad) : storage_(std::make_shared<Storage>()) {
  storage_->values.assign(shape_numel(shape), 0.0);
  storage_->shape = std::move(shape);
  storage_->requires_grad = requires_grad;
  storage_->uid = next_uid();
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) : storage_(std::make_shared<Storage>()) {
  if (values.size() != shape_numel(shape))
    fail(ErrorCode::ShapeMismatch, "value count " + std::to_string(values.size()) + " does not match shape " +
                                       shape_string(shape));
  storage_->shape = std::move(shape);
  storage_->values = std::move(values);
  storage_->requires_grad = requires_grad;
  storage_->uid = next_uid();
}

Tensor Tensor::scalar(double value) { return Tensor({1}, std::vector<double>{value}); }

Tensor Tensor::scalar_extended(long double value) {
  Tensor t({1}, std::vector<double>{static_cast<double>(value)});
  t.storage_->extended = value;
  t.storage_->has_extended = true;
  return t;
}

long double Tensor::item_extended() const {
  const double v = item();
  return storage_->has_extended ? storage_->extended : v;
}

double Tensor::item() const {
  if (numel() != 1) fail(ErrorCode::ShapeMismatch, "item() on tensor of shape " + shape_string(shape()));
  return storage_->values[0];
}

std::span<double> Tensor::mutable_grad() const {
  if (storage_->grad.empty()) storage_->grad.assign(storage_->values.size(), 0.0);
  return storage_->grad;
}

void Tensor::zero_grad() const {
  if (!storage_->grad.empty()) std::fill(storage_->grad.begin(), storage_->grad.end(), 0.0);
}

Tensor Tensor::clone() const { return Tensor(storage_->shape, storage_->values); }

void Tape::backward(Tensor& loss) {
  if (loss.numel() != 1) fail(ErrorCode::ShapeMismatch, "backward() needs a scalar loss");
  loss.mutable_grad()[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
}

Tape* Tape::active() { return g_active_tape; }

Tape::Scope::Scope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
Tape::Scope::~Scope() { g_active_tape = previous_; }

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (!g_active_tape) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

}  // namespace vqamask::nn
