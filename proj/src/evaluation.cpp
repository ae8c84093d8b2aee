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

#include "mrf/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "mrf/config.hpp"

namespace mrf {

Metrics compute_metrics(const std::vector<double>& gt, const std::vector<double>& pred) {
  if (gt.empty()) throw std::invalid_argument("cannot evaluate an empty test set");
  if (gt.size() != pred.size()) throw std::invalid_argument("ground truth and predictions differ in length");
  double abs_sum = 0, sq_sum = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double e = gt[i] - pred[i];
    abs_sum += std::abs(e);
    sq_sum += e * e;
  }
  const double t = static_cast<double>(gt.size());
  return {abs_sum / t, std::sqrt(sq_sum / t), gt.size()};
}

template <typename T>
std::vector<PatchPrediction> predict_patches(Network<T>& network, const std::vector<PatchTriplet>& triplets,
                                             std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  const bool was_training = network.training();
  network.set_training(false);
  NoGradGuard no_grad;
  const auto weights = counting_weights(network.config());
  std::vector<PatchPrediction> out;
  out.reserve(triplets.size());
  for (std::size_t start = 0; start < triplets.size(); start += batch_size) {
    std::vector<const PatchTriplet*> batch;
    for (std::size_t i = start; i < std::min(triplets.size(), start + batch_size); ++i) batch.push_back(&triplets[i]);
    for (const auto& h : to_head_outputs(network.forward(make_batch<T>(batch)))) {
      PatchPrediction p;
      p.heads = h;
      p.count = std::max(combine_counts(h, weights), 0.0);
      out.push_back(p);
    }
  }
  network.set_training(was_training);
  return out;
}

template <typename T>
ImagePrediction predict_image(Network<T>& network, const Image& image, const std::string& image_id,
                              std::size_t batch_size) {
  Annotation empty;
  empty.image_id = image_id;
  empty.width = image.width;
  empty.height = image.height;
  const auto tiles = tile_image(image, empty, network.config().patch_size);
  std::vector<PatchTriplet> triplets;
  triplets.reserve(tiles.size());
  for (const auto& t : tiles) triplets.push_back(make_priors(t));
  ImagePrediction result;
  result.image_id = image_id;
  result.patches = predict_patches(network, triplets, batch_size);
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    result.patches[i].origin_x = tiles[i].origin_x;
    result.patches[i].origin_y = tiles[i].origin_y;
    result.total += result.patches[i].count;
  }
  return result;
}

template <typename T>
Evaluation evaluate(Network<T>& network, const Dataset& dataset, std::size_t batch_size) {
  if (dataset.size() == 0) throw std::invalid_argument("cannot evaluate an empty test set");
  Evaluation ev;
  std::vector<double> predicted;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    ev.predictions.push_back(predict_image(network, dataset.images[i], dataset.annotations[i].image_id, batch_size));
    ev.ground_truth.push_back(static_cast<double>(dataset.annotations[i].count()));
    predicted.push_back(ev.predictions.back().total);
  }
  ev.metrics = compute_metrics(ev.ground_truth, predicted);
  return ev;
}

void write_prediction_dump(const std::filesystem::path& path, const Evaluation& ev) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write predictions to " + path.string());
  for (std::size_t i = 0; i < ev.predictions.size(); ++i) {
    const double gt = ev.ground_truth[i], pred = ev.predictions[i].total;
    out << ev.predictions[i].image_id << '\t' << format_double(gt) << '\t' << format_double(pred) << '\t'
        << format_double(std::abs(gt - pred)) << '\n';
  }
  out << "MAE\t" << format_double(ev.metrics.mae) << "\tRMSE\t" << format_double(ev.metrics.rmse) << '\n';
  if (!out) throw std::runtime_error("cannot write predictions to " + path.string());
}

template std::vector<PatchPrediction> predict_patches<float>(Network<float>&, const std::vector<PatchTriplet>&, std::size_t);
template std::vector<PatchPrediction> predict_patches<double>(Network<double>&, const std::vector<PatchTriplet>&, std::size_t);
template ImagePrediction predict_image<float>(Network<float>&, const Image&, const std::string&, std::size_t);
template ImagePrediction predict_image<double>(Network<double>&, const Image&, const std::string&, std::size_t);
template Evaluation evaluate<float>(Network<float>&, const Dataset&, std::size_t);
template Evaluation evaluate<double>(Network<double>&, const Dataset&, std::size_t);

}  // namespace mrf
