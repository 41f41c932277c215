// SPDX-License-Identifier: Apache-2.0
#include "tractseg/tensor.hpp"

#include <algorithm>
#include <functional>
#include <sstream>
#include <unordered_set>

#include "tractseg/error.hpp"

namespace tractseg {

namespace {
thread_local bool g_grad_enabled = true;
}

Shape::Shape(std::initializer_list<std::size_t> dims) : Shape(std::vector<std::size_t>(dims)) {}

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
  for (std::size_t d : dims_) {
    if (d == 0) {
      throw DimensionError("zero-size dimension in shape " + str());
    }
  }
}

std::size_t Shape::numel() const noexcept {
  std::size_t n = 1;
  for (std::size_t d : dims_) n *= d;
  return n;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) os << ", ";
    os << dims_[i];
  }
  os << ')';
  return os.str();
}

std::span<float> detail::TensorImpl::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0f);
  return grad;
}

Tensor Tensor::wrap(std::shared_ptr<detail::TensorImpl> impl) { return Tensor(std::move(impl)); }

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return from_data(shape, std::vector<float>(shape.numel(), 0.0f), requires_grad);
}

Tensor Tensor::full(const Shape& shape, float value, bool requires_grad) {
  return from_data(shape, std::vector<float>(shape.numel(), value), requires_grad);
}

Tensor Tensor::from_data(const Shape& shape, std::vector<float> values, bool requires_grad) {
  if (shape.rank() == 0) {
    throw DimensionError("tensor shape must have at least one dimension");
  }
  if (values.size() != shape.numel()) {
    throw DimensionError("data length " + std::to_string(values.size()) +
                         " does not match shape " + shape.str());
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = shape;
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(float value, bool requires_grad) {
  return from_data(Shape{1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
  if (!impl_) throw Error("use of undefined tensor");
  return impl_->shape;
}

std::span<const float> Tensor::data() const {
  if (!impl_) throw Error("use of undefined tensor");
  return impl_->data;
}

std::span<float> Tensor::mutable_data() {
  if (!impl_) throw Error("use of undefined tensor");
  return impl_->data;
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!impl_) throw Error("use of undefined tensor");
  if (impl_->grad_fn && !on) {
    throw Error("cannot clear requires_grad on a non-leaf tensor; use detach()");
  }
  impl_->requires_grad = on;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const float> Tensor::grad() const {
  if (!impl_) throw Error("use of undefined tensor");
  return impl_->grad_buffer();
}

std::span<float> Tensor::mutable_grad() {
  if (!impl_) throw Error("use of undefined tensor");
  return impl_->grad_buffer();
}

void Tensor::zero_grad() {
  if (impl_) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
}

bool Tensor::has_grad_fn() const { return impl_ && impl_->grad_fn != nullptr; }

const char* Tensor::op_name() const {
  return has_grad_fn() ? impl_->grad_fn->op : "leaf";
}

float Tensor::item() const {
  if (numel() != 1) {
    throw DimensionError("item() on tensor of shape " + shape().str());
  }
  return data()[0];
}

Tensor Tensor::clone() const {
  return from_data(shape(), std::vector<float>(data().begin(), data().end()), false);
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = shape();
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

ComputationTape record_tape(const Tensor& root) {
  ComputationTape tape;
  if (!root.defined()) return tape;

  // Iterative post-order DFS; yields inputs before consumers.
  std::unordered_set<const detail::TensorImpl*> visited;
  struct Frame {
    std::shared_ptr<detail::TensorImpl> impl;
    std::size_t next_input;
  };
  std::vector<Frame> stack;
  stack.push_back({root.impl(), 0});
  visited.insert(root.impl().get());
  while (!stack.empty()) {
    Frame& top = stack.back();
    const auto& fn = top.impl->grad_fn;
    if (fn && top.next_input < fn->inputs.size()) {
      auto child = fn->inputs[top.next_input++];
      if (child->requires_grad && visited.insert(child.get()).second) {
        stack.push_back({std::move(child), 0});
      }
      continue;
    }
    tape.nodes.push_back(std::move(top.impl));
    stack.pop_back();
  }
  return tape;
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw DimensionError("backward() needs a scalar loss, got shape " +
                         (loss.defined() ? loss.shape().str() : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) {
    throw Error("backward() on a loss that does not depend on any tensor requiring grad");
  }
  ComputationTape tape = record_tape(loss);
  auto root = loss.impl();
  root->grad_buffer()[0] += 1.0f;

  // Intermediate gradients live only for this replay so repeated backward
  // calls through a shared graph still accumulate correctly at the leaves.
  for (auto it = tape.nodes.rbegin(); it != tape.nodes.rend(); ++it) {
    auto& impl = *it;
    if (!impl->grad_fn) continue;
    if (!impl->grad.empty()) {
      impl->grad_fn->backward(impl->grad);
    }
    impl->grad.clear();
    impl->grad.shrink_to_fit();
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_mode_enabled() noexcept { return g_grad_enabled; }

Tensor detail::make_result(const char* op, Shape shape, std::vector<float> data,
                           std::initializer_list<Tensor> inputs,
                           std::function<void(std::span<const float>)> backward_rule) {
  Tensor out = Tensor::from_data(shape, std::move(data), false);
  if (!g_grad_enabled) return out;
  bool needs = std::any_of(inputs.begin(), inputs.end(),
                           [](const Tensor& t) { return t.requires_grad(); });
  if (!needs) return out;
  auto node = std::make_shared<Node>();
  node->op = op;
  for (const Tensor& t : inputs) node->inputs.push_back(t.impl());
  node->backward = std::move(backward_rule);
  auto impl = out.impl();
  impl->grad_fn = std::move(node);
  impl->requires_grad = true;
  return out;
}

}  // namespace tractseg
