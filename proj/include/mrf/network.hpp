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

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mrf/layers.hpp"
#include "mrf/tensor.hpp"

namespace mrf {

enum class HeadVersion { kV1 = 1, kV2, kV3, kV4, kV5 };

std::string to_string(HeadVersion version);
HeadVersion parse_head_version(const std::string& text);

/// One column of the main network: width and square resolution.
struct ColumnSpec {
  int index;
  std::size_t channels;
  std::size_t resolution;

  bool operator==(const ColumnSpec&) const = default;
};

/// Architectural hyperparameters of the fusion network.
struct ModelConfig {
  std::size_t base_width = 32;
  std::array<std::size_t, 3> rm_per_phase{1, 2, 2};
  HeadVersion head_version = HeadVersion::kV5;
  /// Combination weights of rh1, rh2, rh3 and the final head.
  std::array<double, 4> weights{0.1, 0.1, 0.1, 0.7};
  bool use_prior_i1 = true;
  bool use_prior_i3 = true;
  bool use_auxiliary_heads = true;
  std::size_t patch_size = 128;

  /// Throws std::invalid_argument naming the first violated constraint.
  void validate() const;

  // Derived widths; the defaults reproduce 64 / 256 / 64 / 1024.
  std::size_t stem_width() const { return 2 * base_width; }
  std::size_t stem1_width() const { return 8 * base_width; }
  std::size_t head_width() const { return 2 * base_width; }
  std::size_t fc_width() const { return 32 * base_width; }

  bool operator==(const ModelConfig&) const = default;
};

/// Column widths and resolutions: C_i = 2 C_{i-1}, R_i = R_{i-1} / 2.
std::array<ColumnSpec, 3> column_specs(const ModelConfig& config);

/// The four per-patch count estimates.
struct HeadOutputs {
  double cc_p1 = 0;
  double cc_p2 = 0;
  double cc_p3 = 0;
  double cc_final = 0;
};

/// w*cc_p1 + x*cc_p2 + y*cc_p3 + z*cc_final.
double combine_counts(const HeadOutputs& h, const std::array<double, 4>& weights);

/// Weights used to turn head outputs into a patch count for a model.
///
/// With auxiliary heads disabled their outputs are identically zero, so the
/// final head alone carries the estimate.
std::array<double, 4> counting_weights(const ModelConfig& config);

using ShapeTrace = std::vector<std::pair<std::string, Shape>>;

/// Input priors for a batch: I1 (N,3,2P,2P), I2 (N,3,P,P), I3 (N,3,P/2,P/2).
template <typename T>
struct PriorBatch {
  Tensor<T> i1;
  Tensor<T> i2;
  Tensor<T> i3;
};

/// Per-head outputs of a batch, each shaped (N, 1).
template <typename T>
struct HeadTensors {
  Tensor<T> rh1;
  Tensor<T> rh2;
  Tensor<T> rh3;
  Tensor<T> final;
};

/// Initial conv-BN-ReLU stack turning one input prior into IC_k.
///
/// Without the I1 prior, stem 1 consumes I2 and drops its second stride-2
/// convolution so IC1 keeps the column-1 resolution.
template <typename T>
class Stem {
 public:
  Stem() = default;
  Stem(int id, const ModelConfig& config, Rng& rng);

  Tensor<T> forward(const Tensor<T>& prior, bool training);
  void collect(const std::string& prefix, ParamList<T>& out);

  int id = 1;
  std::vector<ConvBnRelu<T>> layers;
};

/// Maps column i's feature maps onto column j's width and resolution.
///
/// i == j is the identity; i < j applies (j - i) stride-2 3x3 conv-BN-ReLU
/// steps; i > j upsamples by 2^(i-j) and applies a 1x1 conv-BN-ReLU.
template <typename T>
class FusionTransform {
 public:
  FusionTransform() = default;
  FusionTransform(const ColumnSpec& source, const ColumnSpec& target, Rng& rng);

  Tensor<T> forward(const Tensor<T>& input, bool training);
  void collect(const std::string& prefix, ParamList<T>& out);

  std::size_t stride2_steps() const { return source.index < target.index ? steps.size() : 0; }

  ColumnSpec source{1, 0, 0};
  ColumnSpec target{1, 0, 0};
  std::size_t upsample = 1;
  std::vector<ConvBnRelu<T>> steps;
};

/// Sum-based exchange among the first `columns` columns.
template <typename T>
class FusionStage {
 public:
  FusionStage() = default;
  FusionStage(const std::array<ColumnSpec, 3>& specs, std::size_t columns, Rng& rng);

  std::vector<Tensor<T>> forward(const std::vector<Tensor<T>>& inputs, bool training);
  void collect(const std::string& prefix, ParamList<T>& out);

  std::vector<ColumnSpec> specs;
  // transforms[j][i] maps source column i into target column j.
  std::vector<std::vector<FusionTransform<T>>> transforms;
};

/// Conv-BN-ReLU stack, optional 2x2 average pool, hidden FC + ReLU, 1-unit FC.
template <typename T>
class RegressionHead {
 public:
  RegressionHead() = default;

  Tensor<T> forward(const Tensor<T>& input, bool training, ShapeTrace* trace, const std::string& name);
  void collect(const std::string& prefix, ParamList<T>& out);

  std::vector<ConvBnRelu<T>> convs;
  bool pool = false;
  Linear<T> hidden;
  Linear<T> output;
};

template <typename T>
RegressionHead<T> make_auxiliary_head(int head_id, const ModelConfig& config, Rng& rng);

template <typename T>
class FinalHead {
 public:
  FinalHead() = default;
  FinalHead(const ModelConfig& config, Rng& rng);

  Tensor<T> forward(const std::vector<Tensor<T>>& columns, bool training, ShapeTrace* trace);
  void collect(const std::string& prefix, ParamList<T>& out);

  HeadVersion version = HeadVersion::kV5;
  // v5 only: column 1 -> 2 and (1+2) -> 3 downsampling convolutions.
  std::vector<ConvBnRelu<T>> merge;
  RegressionHead<T> tail;
};

/// The three-phase, three-column fusion network with all regression heads.
template <typename T>
class Network {
 public:
  explicit Network(const ModelConfig& config, std::uint64_t seed = 0);

  const ModelConfig& config() const { return config_; }
  const std::array<ColumnSpec, 3>& columns() const { return specs_; }

  void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }

  HeadTensors<T> forward(const PriorBatch<T>& batch, ShapeTrace* trace = nullptr);

  /// Every parameter and buffer, in a fixed order.
  ParamList<T> parameters();
  /// Sets every trainable parameter to zero (buffers untouched).
  void zero_parameters();
  void zero_grad();

  /// Copies values by name from a network of identical configuration.
  template <typename U>
  void copy_from(Network<U>& other);

  Stem<T> stem1, stem2, stem3;
  std::vector<ResidualModule<T>> phase1;
  ConvBnRelu<T> phase1_reduce;
  ConvBnRelu<T> transition2;
  ConvBnRelu<T> transition3;
  // phase2[r][c]: column c's r-th residual module; fusion after each r.
  std::vector<std::vector<ResidualModule<T>>> phase2, phase3;
  std::vector<FusionStage<T>> fuse2, fuse3;
  std::optional<RegressionHead<T>> rh1, rh2, rh3;
  FinalHead<T> final_head;

 private:
  ModelConfig config_;
  std::array<ColumnSpec, 3> specs_;
  bool training_ = false;
};

/// Per-sample head outputs from (N, 1) head tensors.
template <typename T>
std::vector<HeadOutputs> to_head_outputs(const HeadTensors<T>& heads);

template <typename T>
template <typename U>
void Network<T>::copy_from(Network<U>& other) {
  if (!(other.config() == config_)) throw std::invalid_argument("copy_from: configurations differ");
  auto dst = parameters();
  auto src = other.parameters();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i].name != src[i].name || dst[i].tensor->shape() != src[i].tensor->shape()) {
      throw std::invalid_argument("copy_from: parameter layout differs at " + dst[i].name);
    }
    auto out = dst[i].tensor->data();
    auto in = src[i].tensor->values();
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = static_cast<T>(in[k]);
  }
}

}  // namespace mrf
