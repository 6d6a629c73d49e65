// Copyright 2026 The segdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "segdiff/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

namespace segdiff {

namespace {

thread_local bool g_grad_enabled = true;
std::atomic<std::uint64_t> g_next_seq{1};

}  // namespace

Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) {
    if (d < 0) throw DimensionError("negative extent in shape " + shape_string(shape));
    n *= d;
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape) : impl_(std::make_shared<detail::TensorImpl>()) {
  impl_->data = Array::Zero(shape_numel(shape));
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, Array values) : impl_(std::make_shared<detail::TensorImpl>()) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_string(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

Tensor Tensor::full(Shape shape, double value) {
  Tensor t(std::move(shape));
  t.values().setConstant(value);
  return t;
}

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, double stddev) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> normal(0.0, stddev);
  for (Index i = 0; i < t.numel(); ++i) t.values()[i] = normal(rng);
  return t;
}

double Tensor::item() const {
  if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_string(shape()));
  return impl_->data[0];
}

double Tensor::at(Index b, Index c, Index h, Index w) const {
  const Shape& s = impl_->shape;
  return impl_->data[((b * s[1] + c) * s[2] + h) * s[3] + w];
}

double& Tensor::at(Index b, Index c, Index h, Index w) {
  const Shape& s = impl_->shape;
  return impl_->data[((b * s[1] + c) * s[2] + h) * s[3] + w];
}

Tensor& Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

Array Tensor::grad() const {
  if (has_grad()) return impl_->grad;
  return Array::Zero(numel());
}

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->data); }

Tensor Tensor::reshape(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw DimensionError("cannot reshape " + shape_string(this->shape()) + " to " +
                         shape_string(shape));
  }
  Tensor out(std::move(shape), impl_->data);
  Tensor self = *this;
  detail::record(out, "reshape", {self}, [self](const Array& g) {
    if (Array* gx = detail::grad_sink(self)) *gx += g;
  });
  return out;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace detail {

void record(Tensor& out, std::string op, std::vector<Tensor> inputs,
            std::function<void(const Array& grad_out)> fn) {
  if (!g_grad_enabled) return;
  bool any = std::any_of(inputs.begin(), inputs.end(),
                         [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return;
  auto node = std::make_shared<Node>();
  node->seq = g_next_seq.fetch_add(1, std::memory_order_relaxed);
  node->op = std::move(op);
  node->inputs.reserve(inputs.size());
  for (const Tensor& t : inputs) node->inputs.push_back(t.impl());
  node->backward = std::move(fn);
  out.impl()->node = std::move(node);
  out.impl()->requires_grad = true;
}

}  // namespace detail

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw UsageError("backward() requires a scalar loss, got shape " +
                     (loss.defined() ? shape_string(loss.shape()) : std::string("<undefined>")));
  }
  // Gather every node reachable from the loss together with its output.
  std::vector<std::pair<detail::Node*, detail::TensorImpl*>> order;
  std::unordered_set<const detail::Node*> seen;
  std::vector<detail::TensorImpl*> stack{loss.impl().get()};
  while (!stack.empty()) {
    detail::TensorImpl* t = stack.back();
    stack.pop_back();
    detail::Node* n = t->node.get();
    if (!n || !seen.insert(n).second) continue;
    order.emplace_back(n, t);
    for (const auto& in : n->inputs) stack.push_back(in.get());
  }
  // Creation order is a topological order, so descending seq visits every
  // node after all of its consumers.
  std::sort(order.begin(), order.end(),
            [](const auto& a, const auto& b) { return a.first->seq > b.first->seq; });

  loss.impl()->ensure_grad() += 1.0;
  for (auto& [node, out] : order) {
    if (out->grad.size() != out->data.size()) continue;  // no gradient reached it
    node->backward(out->grad);
  }
}

}  // namespace segdiff
