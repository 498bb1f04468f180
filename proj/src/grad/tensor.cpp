#include "motionlab/grad/tensor.hpp"

#include "motionlab/error.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace motionlab::grad {

std::size_t volume(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), values_(volume(shape_), fill) {}

Tensor Tensor::uninitialized(Shape shape) {
  Tensor t;
  t.values_.resize(volume(shape));
  t.shape_ = std::move(shape);
  return t;
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(values.begin(), values.end()) {
  if (values_.size() != volume(shape_)) {
    throw Error(ErrorCode::ShapeMismatch, "shape " + to_string(shape_) + " needs " +
                                              std::to_string(volume(shape_)) + " values, got " +
                                              std::to_string(values_.size()));
  }
}

double Tensor::item() const {
  if (values_.size() != 1) {
    throw Error(ErrorCode::ShapeMismatch, "item() on tensor of shape " + to_string(shape_));
  }
  return values_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (volume(shape) != values_.size()) {
    throw Error(ErrorCode::ShapeMismatch,
                "cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  Tensor out = *this;
  out.shape_ = std::move(shape);
  return out;
}

void Tensor::fill(double value) { std::fill(values_.begin(), values_.end(), value); }

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

Parameter& ParameterStore::add(const std::string& name, Shape shape) {
  if (index_.contains(name)) {
    throw Error(ErrorCode::ConfigError, "duplicate parameter '" + name + "'");
  }
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->value = Tensor(shape);
  p->grad = Tensor(std::move(shape));
  index_.emplace(name, params_.size());
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter* ParameterStore::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

const Parameter* ParameterStore::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

Parameter& ParameterStore::get(const std::string& name) {
  if (auto* p = find(name)) return *p;
  throw Error(ErrorCode::ConfigMismatch, "no parameter named '" + name + "'");
}

const Parameter& ParameterStore::get(const std::string& name) const {
  if (const auto* p = find(name)) return *p;
  throw Error(ErrorCode::ConfigMismatch, "no parameter named '" + name + "'");
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p->grad.fill(0.0);
}

}  // namespace motionlab::grad
