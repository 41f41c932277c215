// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace tractseg {

/// Dimension sizes of a dense row-major tensor. Every entry is positive.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims);
  explicit Shape(std::vector<std::size_t> dims);

  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t operator[](std::size_t axis) const { return dims_.at(axis); }
  std::size_t numel() const noexcept;
  const std::vector<std::size_t>& dims() const noexcept { return dims_; }

  friend bool operator==(const Shape&, const Shape&) = default;

  std::string str() const;

 private:
  std::vector<std::size_t> dims_;
};

class Tensor;

namespace detail {

struct TensorImpl;

/// One recorded operation: the tensors it read and the rule that pushes the
/// output gradient back into them.
struct Node {
  const char* op = "";
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void(std::span<const float> out_grad)> backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::shared_ptr<Node> grad_fn;

  std::span<float> grad_buffer();
};

}  // namespace detail

/// Dense 32-bit float tensor with an optional gradient slot.
///
/// A Tensor is a cheap handle: copies share storage. Operations never write to
/// their inputs; they return fresh tensors and, when any input requires a
/// gradient, attach a backward rule to the result.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, float value, bool requires_grad = false);
  static Tensor from_data(const Shape& shape, std::vector<float> values,
                          bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t numel() const { return shape().numel(); }

  std::span<const float> data() const;
  /// Write access for optimizers and loaders. Never call while a recorded
  /// graph that reads this tensor is still waiting for backward.
  std::span<float> mutable_data();

  bool requires_grad() const;
  void set_requires_grad(bool on);

  bool has_grad() const;
  /// Gradient accumulated so far; zeros when none has been accumulated.
  std::span<const float> grad() const;
  std::span<float> mutable_grad();
  void zero_grad();

  /// True for tensors produced by a recorded operation.
  bool has_grad_fn() const;
  const char* op_name() const;

  float item() const;

  /// Deep copy of data; the copy is a fresh leaf.
  Tensor clone() const;
  /// Same storage, cut from the graph.
  Tensor detach() const;

  std::shared_ptr<detail::TensorImpl> impl() const noexcept { return impl_; }
  static Tensor wrap(std::shared_ptr<detail::TensorImpl> impl);

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Reverse topological replay order of the graph under a loss.
///
/// nodes are in forward (topological) order: every tensor appears after all
/// tensors it was computed from.
struct ComputationTape {
  std::vector<std::shared_ptr<detail::TensorImpl>> nodes;
};

ComputationTape record_tape(const Tensor& root);

/// Accumulates d(loss)/d(leaf) into every requires_grad leaf reachable from
/// `loss`. Gradients add up across calls and across multiple uses of a tensor.
/// Throws DimensionError when `loss` is not a single element.
void backward(const Tensor& loss);

/// While alive, operations on this thread record no backward rules.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled() noexcept;

namespace detail {

/// Builds the result tensor of an operation and, if grad mode is on and any
/// input needs a gradient, wires in the backward rule.
Tensor make_result(const char* op, Shape shape, std::vector<float> data,
                   std::initializer_list<Tensor> inputs,
                   std::function<void(std::span<const float>)> backward_rule);

}  // namespace detail

}  // namespace tractseg
