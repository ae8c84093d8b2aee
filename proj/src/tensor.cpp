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

#include "mrf/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

namespace mrf {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

namespace detail {

std::uint64_t next_sequence() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

}  // namespace detail

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) {
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + mrf::to_string(shape));
  }
  node_ = std::make_shared<detail::Node<T>>();
  node_->value.assign(mrf::numel(shape), fill);
  node_->shape = std::move(shape);
  node_->seq = detail::next_sequence();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) {
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + mrf::to_string(shape));
  }
  if (values.size() != mrf::numel(shape)) {
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                     mrf::to_string(shape));
  }
  node_ = std::make_shared<detail::Node<T>>();
  node_->value = std::move(values);
  node_->shape = std::move(shape);
  node_->seq = detail::next_sequence();
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  if (!node_) throw std::logic_error("undefined tensor");
  return node_->shape;
}

template <typename T>
std::size_t Tensor<T>::size(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + mrf::to_string(s));
  }
  return s[axis];
}

template <typename T>
std::size_t Tensor<T>::numel() const {
  return node_ ? node_->value.size() : 0;
}

template <typename T>
std::span<const T> Tensor<T>::values() const {
  if (!node_) throw std::logic_error("undefined tensor");
  return node_->value;
}

template <typename T>
std::span<T> Tensor<T>::data() {
  if (!node_) throw std::logic_error("undefined tensor");
  if (!node_->leaf) throw std::logic_error("cannot write the values of an operation result");
  return node_->value;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() needs a single element, got " + mrf::to_string(shape()));
  return node_->value[0];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  return node_ && node_->requires_grad;
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  if (!node_) throw std::logic_error("undefined tensor");
  if (!node_->leaf) throw std::logic_error("requires_grad can only be set on leaf tensors");
  node_->requires_grad = on;
  return *this;
}

template <typename T>
bool Tensor<T>::has_grad() const {
  return node_ && node_->grad.size() == node_->value.size();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (!has_grad()) throw std::logic_error("tensor has no gradient");
  return node_->grad;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
  if (!node_) throw std::logic_error("undefined tensor");
  return node_->grad_buffer();
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (!node_) return;
  // Trainable leaves get a zero buffer so unreached parameters still carry one.
  if (node_->leaf && node_->requires_grad) {
    auto& g = node_->grad_buffer();
    std::fill(g.begin(), g.end(), T{0});
  } else if (!node_->grad.empty()) {
    std::fill(node_->grad.begin(), node_->grad.end(), T{0});
  }
}

template <typename T>
void Tensor<T>::backward() const {
  if (!node_) throw std::logic_error("undefined tensor");
  if (node_->value.size() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " + mrf::to_string(node_->shape));
  }
  if (node_->released) throw std::logic_error("backward() already ran on this graph");
  if (!node_->requires_grad) throw std::logic_error("loss does not depend on any tensor requiring grad");

  using N = detail::Node<T>;
  // Holding owners keeps every node alive while inputs are released below.
  std::vector<std::shared_ptr<N>> order;
  std::unordered_set<N*> seen;
  std::vector<std::shared_ptr<N>> stack{node_};
  while (!stack.empty()) {
    std::shared_ptr<N> n = std::move(stack.back());
    stack.pop_back();
    if (!seen.insert(n.get()).second) continue;
    for (const auto& in : n->inputs) {
      if (in && in->requires_grad) stack.push_back(in);
    }
    order.push_back(std::move(n));
  }
  // A node is created after all of its inputs, so descending creation order
  // is a valid reverse topological order.
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a->seq > b->seq; });

  node_->grad_buffer()[0] += T{1};
  for (const auto& n : order) {
    if (n->leaf) continue;
    n->grad_buffer();
    if (n->backward_fn) n->backward_fn(*n);
    if (n != node_) std::vector<T>().swap(n->grad);
  }
  for (const auto& n : order) {
    if (n->leaf) continue;
    n->backward_fn = nullptr;
    n->inputs.clear();
    n->released = true;
  }
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor<T>(shape(), std::vector<T>(values().begin(), values().end()));
}

template <typename T>
Tensor<T> elementwise(ElementwiseKind kind, const Tensor<T>& a, const Tensor<T>& b) {
  const bool scalar_b = b.numel() == 1 && a.numel() != 1;
  const bool scalar_a = a.numel() == 1 && b.numel() != 1;
  if (scalar_a) {
    // Normalise to (tensor, scalar); sub keeps its order below.
    if (kind != ElementwiseKind::kSub) return elementwise(kind, b, a);
  }
  if (!scalar_a && !scalar_b && a.shape() != b.shape()) {
    throw ShapeError("elementwise operands differ in shape: " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
  const Shape out_shape = scalar_a ? b.shape() : a.shape();
  const std::size_t n = numel(out_shape);
  auto av = a.values();
  auto bv = b.values();
  auto ai = [&](std::size_t i) { return scalar_a ? av[0] : av[i]; };
  auto bi = [&](std::size_t i) { return scalar_b ? bv[0] : bv[i]; };
  std::vector<T> out(n);
  switch (kind) {
    case ElementwiseKind::kAdd:
      for (std::size_t i = 0; i < n; ++i) out[i] = ai(i) + bi(i);
      break;
    case ElementwiseKind::kSub:
      for (std::size_t i = 0; i < n; ++i) out[i] = ai(i) - bi(i);
      break;
    case ElementwiseKind::kMul:
      for (std::size_t i = 0; i < n; ++i) out[i] = ai(i) * bi(i);
      break;
  }
  const char* name = kind == ElementwiseKind::kAdd ? "add" : kind == ElementwiseKind::kSub ? "sub" : "mul";
  return detail::record<T>(out_shape, std::move(out), name, {a, b},
                           [kind, scalar_a, scalar_b](detail::Node<T>& self) {
    const auto& g = self.grad;
    const std::size_t n = g.size();
    auto* na = detail::grad_input(self, 0);
    auto* nb = detail::grad_input(self, 1);
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    auto accumulate = [&](detail::Node<T>* target, bool is_scalar, auto&& partial) {
      if (!target) return;
      auto& tg = target->grad_buffer();
      if (is_scalar) {
        T s{0};
        for (std::size_t i = 0; i < n; ++i) s += partial(i);
        tg[0] += s;
      } else {
        for (std::size_t i = 0; i < n; ++i) tg[i] += partial(i);
      }
    };
    auto a_at = [&](std::size_t i) { return scalar_a ? av[0] : av[i]; };
    auto b_at = [&](std::size_t i) { return scalar_b ? bv[0] : bv[i]; };
    switch (kind) {
      case ElementwiseKind::kAdd:
        accumulate(na, scalar_a, [&](std::size_t i) { return g[i]; });
        accumulate(nb, scalar_b, [&](std::size_t i) { return g[i]; });
        break;
      case ElementwiseKind::kSub:
        accumulate(na, scalar_a, [&](std::size_t i) { return g[i]; });
        accumulate(nb, scalar_b, [&](std::size_t i) { return -g[i]; });
        break;
      case ElementwiseKind::kMul:
        accumulate(na, scalar_a, [&](std::size_t i) { return g[i] * b_at(i); });
        accumulate(nb, scalar_b, [&](std::size_t i) { return g[i] * a_at(i); });
        break;
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  auto av = a.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * factor;
  return detail::record<T>(a.shape(), std::move(out), "scale", {a}, [factor](detail::Node<T>& self) {
    if (auto* in = detail::grad_input(self, 0)) {
      auto& ig = in->grad_buffer();
      for (std::size_t i = 0; i < ig.size(); ++i) ig[i] += self.grad[i] * factor;
    }
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T offset) {
  auto av = a.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + offset;
  return detail::record<T>(a.shape(), std::move(out), "add_scalar", {a}, [](detail::Node<T>& self) {
    if (auto* in = detail::grad_input(self, 0)) {
      auto& ig = in->grad_buffer();
      for (std::size_t i = 0; i < ig.size(); ++i) ig[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& a) {
  T s{0};
  for (T v : a.values()) s += v;
  return detail::record<T>(Shape{1}, std::vector<T>{s}, "reduce_sum", {a}, [](detail::Node<T>& self) {
    if (auto* in = detail::grad_input(self, 0)) {
      auto& ig = in->grad_buffer();
      const T g = self.grad[0];
      for (auto& v : ig) v += g;
    }
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.numel()) {
    throw ShapeError("cannot reshape " + to_string(a.shape()) + " to " + to_string(shape));
  }
  auto av = a.values();
  return detail::record<T>(std::move(shape), std::vector<T>(av.begin(), av.end()), "reshape", {a},
                           [](detail::Node<T>& self) {
    if (auto* in = detail::grad_input(self, 0)) {
      auto& ig = in->grad_buffer();
      for (std::size_t i = 0; i < ig.size(); ++i) ig[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  auto av = a.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] > T{0} ? av[i] : T{0};
  return detail::record<T>(a.shape(), std::move(out), "relu", {a}, [](detail::Node<T>& self) {
    if (auto* in = detail::grad_input(self, 0)) {
      auto& ig = in->grad_buffer();
      const auto& x = in->value;
      for (std::size_t i = 0; i < ig.size(); ++i) {
        if (x[i] > T{0}) ig[i] += self.grad[i];
      }
    }
  });
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels needs at least one tensor");
  const Shape& first = parts.front().shape();
  if (first.size() != 4) throw ShapeError("concat_channels expects NCHW, got " + to_string(first));
  std::size_t channels = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != 4 || s[0] != first[0] || s[2] != first[2] || s[3] != first[3]) {
      throw ShapeError("concat_channels shape mismatch: " + to_string(first) + " vs " + to_string(s));
    }
    widths.push_back(s[1]);
    channels += s[1];
  }
  const std::size_t batch = first[0];
  const std::size_t plane = first[2] * first[3];
  std::vector<T> out(batch * channels * plane);
  for (std::size_t n = 0; n < batch; ++n) {
    std::size_t offset = n * channels * plane;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      auto v = parts[k].values();
      const std::size_t len = widths[k] * plane;
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(n * len), len, out.begin() + static_cast<std::ptrdiff_t>(offset));
      offset += len;
    }
  }
  Shape out_shape{batch, channels, first[2], first[3]};
  return detail::record<T>(out_shape, std::move(out), "concat_channels", parts,
                           [widths, batch, channels, plane](detail::Node<T>& self) {
    std::size_t channel_offset = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      const std::size_t len = widths[k] * plane;
      if (auto* in = detail::grad_input(self, k)) {
        auto& ig = in->grad_buffer();
        for (std::size_t n = 0; n < batch; ++n) {
          const T* src = self.grad.data() + n * channels * plane + channel_offset * plane;
          T* dst = ig.data() + n * len;
          for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
        }
      }
      channel_offset += widths[k];
    }
  });
}

#define MRF_INSTANTIATE(T)                                                                   \
  template class Tensor<T>;                                                                  \
  template Tensor<T> elementwise<T>(ElementwiseKind, const Tensor<T>&, const Tensor<T>&);   \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                          \
  template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                                     \
  template Tensor<T> reduce_sum<T>(const Tensor<T>&);                                        \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                    \
  template Tensor<T> relu<T>(const Tensor<T>&);                                              \
  template Tensor<T> concat_channels<T>(const std::vector<Tensor<T>>&);

MRF_INSTANTIATE(float)
MRF_INSTANTIATE(double)

#undef MRF_INSTANTIATE

}  // namespace mrf
