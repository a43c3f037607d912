#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <numeric>
#include <span>
#include <vector>

#include "lmfb/common.hpp"

namespace lmfb {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

// Dense row-major f64 array with an optional gradient buffer. Handle
// semantics: copies share storage, so a Tensor appearing in a tape closure
// sees later grad accumulation.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return Tensor(std::move(shape), {}, requires_grad, true);
  }

  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (double& x : t.values()) x = v;
    return t;
  }

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (values.size() != shape_numel(shape))
      throw UsageError("Tensor::from: values length does not match shape");
    Tensor t(std::move(shape), std::move(values), requires_grad, false);
    return t;
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  std::size_t size() const { return d_->value.size(); }
  std::size_t rows() const { return d_->shape.size() == 2 ? d_->shape[0] : 1; }
  std::size_t cols() const { return d_->shape.size() == 2 ? d_->shape[1] : d_->value.size(); }
  bool requires_grad() const { return d_->requires_grad; }

  std::span<double> values() { return {d_->value.data(), d_->value.size()}; }
  std::span<const double> values() const { return {d_->value.data(), d_->value.size()}; }
  double& at(std::size_t i) { return d_->value[i]; }
  double at(std::size_t i) const { return d_->value[i]; }
  double& at(std::size_t r, std::size_t c) { return d_->value[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return d_->value[r * cols() + c]; }

  std::span<double> grad() {
    check_grad();
    return {d_->grad.data(), d_->grad.size()};
  }
  std::span<const double> grad() const {
    check_grad();
    return {d_->grad.data(), d_->grad.size()};
  }

  double item() const {
    if (size() != 1) throw UsageError("Tensor::item: tensor is not scalar");
    return d_->value[0];
  }

  void zero_grad() {
    if (d_ && d_->requires_grad) std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
  }

  bool all_finite() const {
    for (double v : d_->value)
      if (!std::isfinite(v)) return false;
    return true;
  }

  Tensor detached_copy(bool requires_grad = false) const {
    return Tensor::from(d_->shape, d_->value, requires_grad);
  }

  // Storage identity, used for tape membership and aliasing checks.
  const void* id() const { return d_.get(); }
  bool same_storage(const Tensor& o) const { return d_ == o.d_; }

 private:
  struct Data {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated iff requires_grad
    bool requires_grad = false;
  };

  Tensor(Shape shape, std::vector<double> values, bool requires_grad, bool zero_fill)
      : d_(std::make_shared<Data>()) {
    d_->shape = std::move(shape);
    if (zero_fill)
      d_->value.assign(shape_numel(d_->shape), 0.0);
    else
      d_->value = std::move(values);
    d_->requires_grad = requires_grad;
    if (requires_grad) d_->grad.assign(d_->value.size(), 0.0);
  }

  void check_grad() const {
    if (!d_ || !d_->requires_grad)
      throw UsageError("Tensor::grad: tensor does not require grad");
  }

  std::shared_ptr<Data> d_;
};

}  // namespace lmfb
