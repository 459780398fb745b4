#include "vqamask/numerics/param_set.hpp"

#include <algorithm>

#include "vqamask/error.hpp"

namespace vqamask::nn {

Tensor& ParamSet::add(const std::string& name, Tensor value) {
  if (params_.contains(name)) fail(ErrorCode::InvalidArgument, "duplicate parameter " + name);
  value.set_requires_grad(true);
  return params_.emplace(name, std::move(value)).first->second;
}

bool ParamSet::contains(std::string_view name) const { return params_.find(name) != params_.end(); }

Tensor& ParamSet::at(std::string_view name) {
  auto it = params_.find(name);
  if (it == params_.end()) fail(ErrorCode::InvalidArgument, "unknown parameter " + std::string(name));
  return it->second;
}

const Tensor& ParamSet::at(std::string_view name) const {
  auto it = params_.find(name);
  if (it == params_.end()) fail(ErrorCode::InvalidArgument, "unknown parameter " + std::string(name));
  return it->second;
}

void ParamSet::freeze(std::string_view name) {
  if (!contains(name)) fail(ErrorCode::InvalidArgument, "cannot freeze unknown parameter " + std::string(name));
  frozen_.emplace(name);
}

void ParamSet::unfreeze(std::string_view name) {
  auto it = frozen_.find(name);
  if (it != frozen_.end()) frozen_.erase(it);
}

void ParamSet::freeze_prefix(std::string_view prefix, bool frozen) {
  for (const auto& [name, _] : params_)
    if (std::string_view(name).starts_with(prefix)) frozen ? freeze(name) : unfreeze(name);
}

bool ParamSet::is_frozen(std::string_view name) const { return frozen_.find(name) != frozen_.end(); }

std::vector<std::string> ParamSet::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, _] : params_) out.push_back(name);
  return out;
}

std::size_t ParamSet::scalar_count(bool trainable_only) const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_)
    if (!trainable_only || !is_frozen(name)) n += t.numel();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& [_, t] : params_) t.zero_grad();
}

void ParamSet::sync_requires_grad() {
  for (auto& [name, t] : params_) t.set_requires_grad(!is_frozen(name));
}

ParamSet ParamSet::clone() const {
  ParamSet out;
  for (const auto& [name, t] : params_) out.add(name, t.clone());
  out.frozen_ = frozen_;
  return out;
}

void ParamSet::assign_values_from(const ParamSet& other) {
  for (auto& [name, t] : params_) {
    if (!other.contains(name)) continue;
    const Tensor& src = other.at(name);
    if (src.shape() != t.shape()) fail(ErrorCode::ShapeMismatch, "assign_values_from: shape differs for " + name);
    auto dst = t.mutable_values();
    std::copy(src.values().begin(), src.values().end(), dst.begin());
  }
}

}  // namespace vqamask::nn
