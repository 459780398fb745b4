#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace vqamask::nn {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major float64 array with an optional gradient buffer.
///
/// Copies share storage (handle semantics); use clone() for a deep copy.
/// Every call to mutable_values() bumps a version counter, so cached results
/// keyed on (uid, version) are invalidated by any write.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double value);
  /// Scalar whose value is also kept in extended precision; loss reductions
  /// use it so finite differences are not limited by the final rounding.
  static Tensor scalar_extended(long double value);

  bool defined() const { return static_cast<bool>(storage_); }
  const Shape& shape() const { return storage_->shape; }
  std::size_t rank() const { return storage_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return storage_->shape.at(axis); }
  std::size_t numel() const { return storage_->values.size(); }

  std::span<const double> values() const { return storage_->values; }
  std::span<double> mutable_values() {
    ++storage_->version;
    storage_->has_extended = false;
    return storage_->values;
  }
  double item() const;
  /// Extended-precision value of a scalar when one was recorded, item() otherwise.
  long double item_extended() const;

  bool requires_grad() const { return storage_ && storage_->requires_grad; }
  void set_requires_grad(bool flag) { storage_->requires_grad = flag; }

  bool has_grad() const { return !storage_->grad.empty(); }
  std::span<const double> grad() const { return storage_->grad; }
  /// Gradient buffer, allocated as zeros on first use. Const because the
  /// handle, not the storage, is const.
  std::span<double> mutable_grad() const;
  void zero_grad() const;

  std::uint64_t uid() const { return storage_->uid; }
  std::uint64_t version() const { return storage_->version; }

  /// Deep copy of values; the copy has no gradient and does not require one.
  Tensor clone() const;

 private:
  struct Storage {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool requires_grad = false;
    std::uint64_t uid = 0;
    std::uint64_t version = 0;
    long double extended = 0.0L;
    bool has_extended = false;
  };
  std::shared_ptr<Storage> storage_;
};

}  // namespace vqamask::nn
