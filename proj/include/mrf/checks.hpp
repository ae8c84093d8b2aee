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

#include <cstdint>
#include <string>
#include <vector>

#include "mrf/gradcheck.hpp"
#include "mrf/network.hpp"

namespace mrf {

/// Random priors of the given batch size for a model configuration.
template <typename T>
PriorBatch<T> random_priors(const ModelConfig& config, std::size_t batch, std::uint64_t seed);

struct TensorGradCheck {
  std::string name;
  GradCheckResult result;
};

struct ModelGradientReport {
  std::vector<TensorGradCheck> tensors;
  double max_relative_error = 0.0;
  std::string worst;
};

/// Finite-difference check of the full model in 64-bit mode.
///
/// One backward pass supplies all analytic gradients; for a strided subset of
/// at most `max_tensors` trainable tensors (plus the I2 input) the element
/// with the largest gradient magnitude is compared against central
/// differences of the same training-mode loss.
ModelGradientReport check_model_gradients(const ModelConfig& config, std::size_t batch, std::uint64_t seed,
                                          std::size_t max_tensors = 48, double epsilon = 1e-6);

struct CheckOutcome {
  std::string name;
  bool passed = false;
  std::string detail;
};

std::vector<CheckOutcome> run_gradient_suite(std::uint64_t seed);
std::vector<CheckOutcome> run_shape_suite();
std::vector<CheckOutcome> run_invariant_suite(std::uint64_t seed);

}  // namespace mrf
