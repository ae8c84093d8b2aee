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
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mrf/ops.hpp"
#include "mrf/tensor.hpp"

namespace mrf {

/// A parameter or buffer exposed under a stable dotted name.
template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T>* tensor;
  bool trainable;
};

template <typename T>
using ParamList = std::vector<NamedTensor<T>>;

using Rng = std::mt19937_64;

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  /// Kernel drawn from N(0, 2 / (out_channels * kernel^2)); bias starts at 0.
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
         std::size_t padding, bool with_bias, Rng& rng);

  Tensor<T> forward(const Tensor<T>& input) const;
  void collect(const std::string& prefix, ParamList<T>& out);

  std::size_t in_channels() const { return weight.size(1); }
  std::size_t out_channels() const { return weight.size(0); }
  std::size_t kernel() const { return weight.size(2); }

  Tensor<T> weight;
  Tensor<T> bias;
  std::size_t stride = 1;
  std::size_t padding = 0;
};

template <typename T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(std::size_t channels);

  Tensor<T> forward(const Tensor<T>& input, bool training);
  void collect(const std::string& prefix, ParamList<T>& out);

  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);
};

/// Convolution (no bias) -> batch norm -> optional ReLU.
template <typename T>
class ConvBnRelu {
 public:
  ConvBnRelu() = default;
  ConvBnRelu(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
             Rng& rng, bool with_relu = true);

  Tensor<T> forward(const Tensor<T>& input, bool training);
  void collect(const std::string& prefix, ParamList<T>& out);

  std::size_t out_channels() const { return conv.out_channels(); }

  Conv2d<T> conv;
  BatchNorm2d<T> bn;
  bool with_relu = true;
};

template <typename T>
class Linear {
 public:
  Linear() = default;
  /// Weight and bias uniform in +-1/sqrt(in_features).
  Linear(std::size_t in_features, std::size_t out_features, Rng& rng);

  Tensor<T> forward(const Tensor<T>& input) const;
  void collect(const std::string& prefix, ParamList<T>& out);

  Tensor<T> weight;
  Tensor<T> bias;
};

enum class UnitKind { kTwoLayer, kThreeLayer };

/// Basic (two 3x3) or bottleneck (1x1, 3x3, 1x1 with expansion 4) unit.
///
/// The last convolution of the branch has no ReLU; ReLU follows the skip
/// addition. A 1x1 conv-BN projection is used exactly when the input width
/// differs from the output width.
template <typename T>
class ResidualUnit {
 public:
  static constexpr std::size_t kExpansion = 4;

  ResidualUnit() = default;
  ResidualUnit(UnitKind kind, std::size_t in_channels, std::size_t out_channels, Rng& rng);

  Tensor<T> forward(const Tensor<T>& input, bool training);
  void collect(const std::string& prefix, ParamList<T>& out);

  UnitKind kind = UnitKind::kTwoLayer;
  std::vector<ConvBnRelu<T>> branch;
  std::optional<ConvBnRelu<T>> projection;
};

/// Four residual units of one kind applied in sequence.
template <typename T>
class ResidualModule {
 public:
  static constexpr std::size_t kUnits = 4;

  ResidualModule() = default;
  ResidualModule(UnitKind kind, std::size_t in_channels, std::size_t out_channels, Rng& rng);

  Tensor<T> forward(const Tensor<T>& input, bool training);
  void collect(const std::string& prefix, ParamList<T>& out);

  std::vector<ResidualUnit<T>> units;
};

/// Total element count of the trainable entries of a parameter list.
template <typename T>
std::size_t count_trainable(const ParamList<T>& params) {
  std::size_t n = 0;
  for (const auto& p : params) {
    if (p.trainable) n += p.tensor->numel();
  }
  return n;
}

}  // namespace mrf
