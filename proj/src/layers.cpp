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

#include "mrf/layers.hpp"

#include <cmath>

namespace mrf {

template <typename T>
Conv2d<T>::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                  std::size_t stride_, std::size_t padding_, bool with_bias, Rng& rng)
    : stride(stride_), padding(padding_) {
  const double fan_out = static_cast<double>(out_channels * kernel * kernel);
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_out));
  std::vector<T> w(out_channels * in_channels * kernel * kernel);
  for (auto& v : w) v = static_cast<T>(dist(rng));
  weight = Tensor<T>(Shape{out_channels, in_channels, kernel, kernel}, std::move(w));
  weight.set_requires_grad(true);
  if (with_bias) {
    bias = Tensor<T>(Shape{out_channels});
    bias.set_requires_grad(true);
  }
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& input) const {
  return conv2d(input, weight, bias, stride, padding);
}

template <typename T>
void Conv2d<T>::collect(const std::string& prefix, ParamList<T>& out) {
  out.push_back({prefix + ".weight", &weight, true});
  if (bias.defined()) out.push_back({prefix + ".bias", &bias, true});
}

template <typename T>
BatchNorm2d<T>::BatchNorm2d(std::size_t channels)
    : gamma(Shape{channels}, T{1}),
      beta(Shape{channels}, T{0}),
      running_mean(Shape{channels}, T{0}),
      running_var(Shape{channels}, T{1}) {
  gamma.set_requires_grad(true);
  beta.set_requires_grad(true);
}

template <typename T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& input, bool training) {
  return batch_norm(input, gamma, beta, running_mean, running_var, training, momentum, eps);
}

template <typename T>
void BatchNorm2d<T>::collect(const std::string& prefix, ParamList<T>& out) {
  out.push_back({prefix + ".gamma", &gamma, true});
  out.push_back({prefix + ".beta", &beta, true});
  out.push_back({prefix + ".running_mean", &running_mean, false});
  out.push_back({prefix + ".running_var", &running_var, false});
}

template <typename T>
ConvBnRelu<T>::ConvBnRelu(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                          std::size_t stride, Rng& rng, bool relu_)
    : conv(in_channels, out_channels, kernel, stride, kernel / 2, false, rng),
      bn(out_channels),
      with_relu(relu_) {}

template <typename T>
Tensor<T> ConvBnRelu<T>::forward(const Tensor<T>& input, bool training) {
  auto y = bn.forward(conv.forward(input), training);
  return with_relu ? relu(y) : y;
}

template <typename T>
void ConvBnRelu<T>::collect(const std::string& prefix, ParamList<T>& out) {
  conv.collect(prefix + ".conv", out);
  bn.collect(prefix + ".bn", out);
}

template <typename T>
Linear<T>::Linear(std::size_t in_features, std::size_t out_features, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_features));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> w(out_features * in_features);
  for (auto& v : w) v = static_cast<T>(dist(rng));
  std::vector<T> b(out_features);
  for (auto& v : b) v = static_cast<T>(dist(rng));
  weight = Tensor<T>(Shape{out_features, in_features}, std::move(w));
  bias = Tensor<T>(Shape{out_features}, std::move(b));
  weight.set_requires_grad(true);
  bias.set_requires_grad(true);
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& input) const {
  return fully_connected(input, weight, bias);
}

template <typename T>
void Linear<T>::collect(const std::string& prefix, ParamList<T>& out) {
  out.push_back({prefix + ".weight", &weight, true});
  out.push_back({prefix + ".bias", &bias, true});
}

template <typename T>
ResidualUnit<T>::ResidualUnit(UnitKind kind_, std::size_t in_channels, std::size_t out_channels, Rng& rng)
    : kind(kind_) {
  if (kind == UnitKind::kTwoLayer) {
    branch.emplace_back(in_channels, out_channels, 3, 1, rng);
    branch.emplace_back(out_channels, out_channels, 3, 1, rng, false);
  } else {
    if (out_channels % kExpansion != 0) {
      throw std::invalid_argument("bottleneck width " + std::to_string(out_channels) +
                                  " is not divisible by the expansion factor 4");
    }
    const std::size_t inner = out_channels / kExpansion;
    branch.emplace_back(in_channels, inner, 1, 1, rng);
    branch.emplace_back(inner, inner, 3, 1, rng);
    branch.emplace_back(inner, out_channels, 1, 1, rng, false);
  }
  if (in_channels != out_channels) projection.emplace(in_channels, out_channels, 1, 1, rng, false);
}

template <typename T>
Tensor<T> ResidualUnit<T>::forward(const Tensor<T>& input, bool training) {
  const std::size_t expected = branch.front().conv.in_channels();
  if (input.dim() != 4 || input.size(1) != expected) {
    throw ShapeError("residual unit expects " + std::to_string(expected) + " input channels, got " +
                     to_string(input.shape()));
  }
  Tensor<T> y = input;
  for (auto& layer : branch) y = layer.forward(y, training);
  Tensor<T> skip = projection ? projection->forward(input, training) : input;
  return relu(add(y, skip));
}

template <typename T>
void ResidualUnit<T>::collect(const std::string& prefix, ParamList<T>& out) {
  for (std::size_t i = 0; i < branch.size(); ++i) branch[i].collect(prefix + ".branch" + std::to_string(i), out);
  if (projection) projection->collect(prefix + ".projection", out);
}

template <typename T>
ResidualModule<T>::ResidualModule(UnitKind kind, std::size_t in_channels, std::size_t out_channels, Rng& rng) {
  units.reserve(kUnits);
  units.emplace_back(kind, in_channels, out_channels, rng);
  for (std::size_t i = 1; i < kUnits; ++i) units.emplace_back(kind, out_channels, out_channels, rng);
}

template <typename T>
Tensor<T> ResidualModule<T>::forward(const Tensor<T>& input, bool training) {
  Tensor<T> y = input;
  for (auto& unit : units) y = unit.forward(y, training);
  return y;
}

template <typename T>
void ResidualModule<T>::collect(const std::string& prefix, ParamList<T>& out) {
  for (std::size_t i = 0; i < units.size(); ++i) units[i].collect(prefix + ".unit" + std::to_string(i), out);
}

template class Conv2d<float>;
template class Conv2d<double>;
template class BatchNorm2d<float>;
template class BatchNorm2d<double>;
template class ConvBnRelu<float>;
template class ConvBnRelu<double>;
template class Linear<float>;
template class Linear<double>;
template class ResidualUnit<float>;
template class ResidualUnit<double>;
template class ResidualModule<float>;
template class ResidualModule<double>;

}  // namespace mrf
