#pragma once

#include <cstddef>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <unordered_map>
#include <vector>

namespace motionlab::grad {

using Shape = std::vector<std::size_t>;

// Every buffer starts on a cache line. Eigen peels unaligned reductions from
// the first aligned element, so summation order (and the last bit of results)
// would otherwise depend on where the heap put the data.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::size_t kAlign = 64;

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{kAlign}));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t{kAlign}); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

// Also leaves elements default-initialised (indeterminate for double) on
// resize, so op outputs that are written in full skip a pass of zero filling.
template <typename T>
struct DefaultInitAllocator : AlignedAllocator<T> {
  template <typename U>
  struct rebind {
    using other = DefaultInitAllocator<U>;
  };
  DefaultInitAllocator() = default;
  template <typename U>
  DefaultInitAllocator(const DefaultInitAllocator<U>&) noexcept {}

  template <typename U>
  void construct(U* p) noexcept(std::is_nothrow_default_constructible_v<U>) {
    ::new (static_cast<void*>(p)) U;
  }
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

/// Zero-initialised scratch storage with tensor alignment.
using Buffer = std::vector<double, AlignedAllocator<double>>;

std::size_t volume(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major tensor of 64-bit floats.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value) { return Tensor({}, {value}); }
  /// Contents are indeterminate; the caller must write every element.
  static Tensor uninitialized(Shape shape);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  /// Value of a single-element tensor.
  double item() const;
  Tensor reshaped(Shape shape) const;
  void fill(double value);
  bool all_finite() const;

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<double, DefaultInitAllocator<double>> values_;
};

/// Trainable tensor with its gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

/// Named parameters in registration order.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) = default;
  ParameterStore& operator=(ParameterStore&&) = default;

  /// Registers a zero-initialized parameter; names must be unique.
  Parameter& add(const std::string& name, Shape shape);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  /// Total number of scalars.
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace motionlab::grad
