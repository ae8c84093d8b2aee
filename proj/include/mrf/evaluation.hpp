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

#include <filesystem>
#include <string>
#include <vector>

#include "mrf/data.hpp"
#include "mrf/network.hpp"

namespace mrf {

struct Metrics {
  double mae = 0;
  double rmse = 0;
  std::size_t images = 0;
};

/// MAE and RMSE over image counts; throws std::invalid_argument when empty or mismatched.
Metrics compute_metrics(const std::vector<double>& ground_truth, const std::vector<double>& predicted);

struct PatchPrediction {
  std::size_t origin_x = 0;
  std::size_t origin_y = 0;
  HeadOutputs heads;
  double count = 0;  // max(combined, 0)
};

struct ImagePrediction {
  std::string image_id;
  std::vector<PatchPrediction> patches;
  double total = 0;
};

/// Clamped combined counts of a batch of triplets (inference mode).
template <typename T>
std::vector<PatchPrediction> predict_patches(Network<T>& network, const std::vector<PatchTriplet>& triplets,
                                             std::size_t batch_size = 16);

/// Tiles the image, predicts every patch and sums the clamped counts.
template <typename T>
ImagePrediction predict_image(Network<T>& network, const Image& image, const std::string& image_id = "",
                              std::size_t batch_size = 16);

struct Evaluation {
  std::vector<ImagePrediction> predictions;
  std::vector<double> ground_truth;
  Metrics metrics;
};

template <typename T>
Evaluation evaluate(Network<T>& network, const Dataset& dataset, std::size_t batch_size = 16);

/// One line per image: id, ground truth, prediction, absolute error; then "MAE\t<v>\tRMSE\t<v>".
void write_prediction_dump(const std::filesystem::path& path, const Evaluation& evaluation);

}  // namespace mrf
