#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"

namespace bangacmm {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// Dense row-major float64 array. Copies of a Tensor share storage; use
// clone() for a deep copy. Gradient storage is allocated on first use and
// reads as zeros until then.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false)
      : impl_(std::make_shared<Impl>()) {
    for (auto d : shape) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
    }
    impl_->data.assign(shape_numel(shape), fill);
    impl_->shape = std::move(shape);
    impl_->requires_grad = requires_grad;
    impl_->needs_grad = requires_grad;
  }

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (shape_numel(shape) != values.size()) {
      throw DimensionError("value count " + std::to_string(values.size()) +
                           " does not match shape " + shape_str(shape));
    }
    Tensor t(std::move(shape), 0.0, requires_grad);
    t.impl_->data = std::move(values);
    return t;
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t last_dim() const { return impl_->shape.back(); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<double> data() { return impl_->data; }
  std::span<const double> data() const { return impl_->data; }
  double& operator[](std::size_t i) { return impl_->data[i]; }
  double operator[](std::size_t i) const { return impl_->data[i]; }
  double& at(std::size_t r, std::size_t c) { return impl_->data[r * last_dim() + c]; }
  double at(std::size_t r, std::size_t c) const { return impl_->data[r * last_dim() + c]; }
  double item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) {
    impl_->requires_grad = on;
    impl_->needs_grad = on;
  }
  // True for parameters and for tape outputs that depend on one.
  bool needs_grad() const { return impl_->needs_grad; }
  void mark_needs_grad() { impl_->needs_grad = true; }

  bool has_grad() const { return !impl_->grad.empty(); }
  // Gradient storage is shared like the values, so const handles can
  // accumulate into it.
  std::span<double> grad() const {
    if (impl_->grad.empty()) impl_->grad.assign(numel(), 0.0);
    return impl_->grad;
  }
  void zero_grad() { impl_->grad.clear(); }

  Tensor clone() const {
    Tensor t = Tensor::from(shape(), impl_->data, requires_grad());
    return t;
  }

  void copy_values_from(const Tensor& other) {
    if (other.shape() != shape()) {
      throw DimensionError("copy from " + shape_str(other.shape()) + " into " + shape_str(shape()));
    }
    impl_->data = other.impl_->data;
  }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    std::vector<double> data;
    mutable std::vector<double> grad;
    bool requires_grad = false;
    bool needs_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

}  // namespace bangacmm
