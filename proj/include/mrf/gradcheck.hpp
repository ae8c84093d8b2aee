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

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <vector>

#include "mrf/tensor.hpp"

namespace mrf {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

/// Compares the tape gradient of `loss` w.r.t. the leaf `x` against central
/// differences, perturbing `x` in place.
///
/// `loss` re-evaluates the scalar from the current values of `x`. When
/// `indices` is empty every element is checked.
inline GradCheckResult finite_difference_check(const std::function<Tensor<double>()>& loss,
                                               Tensor<double> x, double epsilon,
                                               const std::vector<std::size_t>& indices = {}) {
  if (!(epsilon >= 1e-6 && epsilon <= 1e-3)) {
    throw std::invalid_argument("finite-difference epsilon must lie in [1e-6, 1e-3]");
  }
  const bool had_grad = x.requires_grad();
  x.set_requires_grad(true);
  x.zero_grad();
  loss().backward();
  std::vector<double> analytic(x.grad().begin(), x.grad().end());
  x.zero_grad();

  std::vector<std::size_t> which = indices;
  if (which.empty()) {
    which.resize(x.numel());
    for (std::size_t i = 0; i < which.size(); ++i) which[i] = i;
  }

  GradCheckResult result;
  NoGradGuard no_grad;
  auto values = x.data();
  for (std::size_t i : which) {
    const double saved = values[i];
    values[i] = saved + epsilon;
    const double plus = loss().item();
    values[i] = saved - epsilon;
    const double minus = loss().item();
    values[i] = saved;
    const double numeric = (plus - minus) / (2.0 * epsilon);
    const double err = relative_error(analytic[i], numeric);
    if (result.checked == 0 || err > result.max_relative_error) {
      result.max_relative_error = err;
      result.worst_index = i;
      result.worst_analytic = analytic[i];
      result.worst_numeric = numeric;
    }
    ++result.checked;
  }
  x.set_requires_grad(had_grad);
  return result;
}

/// Convenience form for a function of a single tensor.
inline double finite_difference_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                                      Tensor<double> x, double epsilon) {
  return finite_difference_check([&] { return f(x); }, x, epsilon).max_relative_error;
}

}  // namespace mrf
