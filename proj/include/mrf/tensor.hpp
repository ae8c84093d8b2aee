// Copyright (c) 2026 The mrfcount Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mrf {

/// Extents of a tensor. Activations use (batch, channels, height, width).
using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Raised when operand shapes are incompatible with an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  bool leaf = true;
  // Set once a backward pass has consumed this node's recorded graph.
  bool released = false;
  std::uint64_t seq = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  /// Gradient storage, zero-filled on first use.
  std::vector<T>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), T{0});
    return grad;
  }
};

std::uint64_t next_sequence();

}  // namespace detail

/// Whether operations currently record onto the tape (thread local).
bool grad_enabled();

/// Disables tape recording for the lifetime of the guard.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Dense row-major array with reverse-mode differentiation.
///
/// Tensor is a shared handle: copies alias the same storage. Values of a
/// tensor produced by an operation are never modified afterwards; leaves
/// (parameters, buffers, inputs) may be written through data().
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0});
  Tensor(Shape shape, std::vector<T> values);

  static Tensor scalar(T value) { return Tensor(Shape{1}, value); }
  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape()); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t size(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const T> values() const;
  std::span<T> data();
  T item() const;
  T at(std::size_t flat_index) const { return values()[flat_index]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const T> grad() const;
  std::span<T> mutable_grad();
  /// Resets the gradient; trainable leaves always end up holding a zero buffer.
  void zero_grad();

  /// Back-propagates from this scalar through the recorded graph.
  ///
  /// The graph is released afterwards; a second call on the same result
  /// throws std::logic_error instead of accumulating twice.
  void backward() const;

  /// A fresh leaf holding a copy of the values.
  Tensor detach() const;

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(numel());
    auto src = values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>(src[i]);
    return Tensor<U>(shape(), std::move(out));
  }

  const NodePtr& node() const { return node_; }
  static Tensor from_node(NodePtr node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

 private:
  NodePtr node_;
};

namespace detail {

/// Builds an operation result and records it when any input needs gradients.
template <typename T>
Tensor<T> record(Shape shape, std::vector<T> value, const char* op,
                 const std::vector<Tensor<T>>& inputs,
                 std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->seq = next_sequence();
  node->op = op;
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs = needs || (in.defined() && in.requires_grad());
  }
  if (needs) {
    node->requires_grad = true;
    node->leaf = false;
    for (const auto& in : inputs) node->inputs.push_back(in.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>::from_node(std::move(node));
}

template <typename T>
Tensor<T> record(Shape shape, std::vector<T> value, const char* op,
                 std::initializer_list<Tensor<T>> inputs,
                 std::function<void(Node<T>&)> backward_fn) {
  return record(std::move(shape), std::move(value), op, std::vector<Tensor<T>>(inputs),
                std::move(backward_fn));
}

/// Input i of a recorded node, or nullptr when it does not take gradients.
template <typename T>
Node<T>* grad_input(Node<T>& self, std::size_t i) {
  Node<T>* in = self.inputs[i].get();
  return (in != nullptr && in->requires_grad) ? in : nullptr;
}

}  // namespace detail

enum class ElementwiseKind { kAdd, kSub, kMul };

template <typename T>
Tensor<T> elementwise(ElementwiseKind kind, const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise(ElementwiseKind::kAdd, a, b);
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise(ElementwiseKind::kSub, a, b);
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise(ElementwiseKind::kMul, a, b);
}
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T offset);

template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& a);

/// Same values under a new shape with the same element count.
template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);

/// max(0, x); the subgradient at exactly 0 is 0.
template <typename T>
Tensor<T> relu(const Tensor<T>& a);

/// Concatenates NCHW tensors along the channel axis.
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts);

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }

}  // namespace mrf
