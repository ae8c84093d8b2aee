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
#include <vector>

#include "mrf/tensor.hpp"

namespace mrf {

/// Zero-padded 2-D cross-correlation on NCHW input.
///
/// weight is (out_channels, in_channels, kH, kW); bias is (out_channels) or
/// undefined. Output extent per axis is floor((in + 2*padding - k)/stride) + 1.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride, std::size_t padding);

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                               std::size_t padding);

/// Per-channel batch normalization over (N, H, W).
///
/// In training mode the batch statistics are used and running_mean /
/// running_var are updated in place by an exponential moving average
/// (running_var tracks the unbiased batch variance). In inference mode the
/// running statistics are used.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                     T momentum, T eps);

/// 2x2 average pooling with stride 2; spatial extents must be even.
template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& input);

/// Integer-factor bilinear upsampling, half-pixel centres, edge clamped.
template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& input, std::size_t factor);

/// x * W^T + b for x of shape (N, ...) flattened to (N, in_features).
template <typename T>
Tensor<T> fully_connected(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias);

/// Interpolation taps of one axis for a half-pixel bilinear resize.
struct LinearTaps {
  std::vector<std::size_t> lo;
  std::vector<std::size_t> hi;
  std::vector<double> frac;  // weight of hi; lo gets 1 - frac
};

LinearTaps linear_taps(std::size_t in_extent, std::size_t out_extent);

/// Bilinear resize of a planar (channels, height, width) float image.
std::vector<float> bilinear_resize(const std::vector<float>& src, std::size_t channels,
                                   std::size_t height, std::size_t width, std::size_t out_height,
                                   std::size_t out_width);

/// Upper bound on threads used by internal linear algebra.
void set_num_threads(int threads);

}  // namespace mrf
