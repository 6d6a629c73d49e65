// Copyright 2026 The segdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "segdiff/errors.hpp"

namespace segdiff {

using Index = Eigen::Index;
using Shape = std::vector<Index>;
using Array = Eigen::ArrayXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

Index shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct Node;

struct TensorImpl {
  Shape shape;
  Array data;
  Array grad;  // empty until first accumulation
  bool requires_grad = false;
  std::shared_ptr<Node> node;  // op that produced this tensor, if recorded

  Array& ensure_grad() {
    if (grad.size() != data.size()) grad = Array::Zero(data.size());
    return grad;
  }
};

// One recorded operation. `backward` reads the output gradient and adds into
// the gradients of whichever inputs require them.
struct Node {
  std::uint64_t seq = 0;
  std::string op;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void(const Array& grad_out)> backward;
};

}  // namespace detail

/// Dense row-major array of doubles with optional gradient tracking.
///
/// Copies are shallow handles to the same storage, like a shared buffer;
/// use clone() for an independent copy. 4-D data is laid out as
/// (batch, channel, height, width).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, Array values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value) { return full({1}, value); }
  static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  Index dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t rank() const { return impl_->shape.size(); }
  Index numel() const { return impl_->data.size(); }

  Array& values() { return impl_->data; }
  const Array& values() const { return impl_->data; }
  double* data() { return impl_->data.data(); }
  const double* data() const { return impl_->data.data(); }
  double item() const;

  double at(Index b, Index c, Index h, Index w) const;
  double& at(Index b, Index c, Index h, Index w);

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  Tensor& set_requires_grad(bool on = true);
  bool has_grad() const { return impl_->grad.size() == impl_->data.size(); }
  /// Accumulated gradient; zeros if nothing was accumulated yet.
  Array grad() const;
  void zero_grad() { impl_->grad.resize(0); }

  /// Same values, no graph history, no gradient tracking.
  Tensor detach() const;
  Tensor clone() const { return detach(); }
  Tensor reshape(Shape shape) const;

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Whether new ops are recorded for backpropagation on this thread.
bool grad_enabled();

/// Disables recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Reverse-mode sweep from a scalar. Gradients accumulate additively into every
/// reachable tensor that requires them; each recorded node runs exactly once,
/// in reverse creation order.
void backward(const Tensor& loss);

namespace detail {

/// Attaches a node to `out` when recording is on and any input requires grad.
void record(Tensor& out, std::string op, std::vector<Tensor> inputs,
            std::function<void(const Array& grad_out)> fn);

/// Gradient buffer of `t` if it participates in backprop, else nullptr.
inline Array* grad_sink(const Tensor& t) {
  return t.requires_grad() ? &t.impl()->ensure_grad() : nullptr;
}

}  // namespace detail

}  // namespace segdiff
