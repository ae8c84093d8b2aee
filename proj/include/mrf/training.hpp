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
#include <cstdint>
#include <filesystem>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mrf/config.hpp"
#include "mrf/data.hpp"
#include "mrf/network.hpp"

namespace mrf {

/// (1/N) sum (p_i - y_i)^2.
double mse_loss(const std::vector<double>& predictions, const std::vector<double>& targets);

/// Differentiable form for an (N, 1) prediction tensor.
template <typename T>
Tensor<T> mse_loss(const Tensor<T>& predictions, const std::vector<double>& targets);

/// w*l1 + x*l2 + y*l3 + z*l_final.
double total_loss(const std::array<double, 4>& losses, const std::array<double, 4>& weights);

template <typename T>
Tensor<T> total_loss(const std::array<Tensor<T>, 4>& losses, const std::array<double, 4>& weights);

/// Weights applied to the four head losses. Disabled auxiliary heads
/// contribute nothing, matching counting_weights.
std::array<double, 4> loss_weights(const ModelConfig& config);

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// SGD with Nesterov momentum and L2 weight decay:
///   g = grad + wd * p;  v = mu * v + g;  p -= lr * (g + mu * v).
template <typename T>
class SgdNesterov {
 public:
  SgdNesterov(ParamList<T> params, double momentum = 0.9, double weight_decay = 0.0001);

  /// Throws TrainingError if a trainable parameter carries no gradient.
  void step(double lr);

  const std::vector<std::vector<T>>& velocities() const { return velocity_; }

 private:
  ParamList<T> params_;
  std::vector<std::vector<T>> velocity_;
  double momentum_;
  double weight_decay_;
};

struct LrSchedule {
  double initial = 0.001;
  std::size_t halving_epochs = 25;
  std::size_t total_epochs = 100;
};

/// initial * 0.5^floor(epoch / halving_epochs); epoch must be below total_epochs.
double lr_at_epoch(std::size_t epoch, const LrSchedule& schedule = {});

/// Image-level split: `fraction` of the source images (at least one) go to validation.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};
Split split_validation(std::size_t images, double fraction, std::uint64_t seed);

Dataset subset(const Dataset& dataset, const std::vector<std::size_t>& indices);

struct StepResult {
  double loss = 0;
  std::array<double, 4> head_losses{};
  std::vector<double> counts;  // clamped combined per-patch counts
};

/// One optimisation step: zero_grad, training-mode forward, the four head
/// losses against the same targets, weighted total, backward, update.
template <typename T>
class Trainer {
 public:
  Trainer(Network<T>& network, double momentum = 0.9, double weight_decay = 0.0001);

  StepResult step(const PriorBatch<T>& batch, const std::vector<double>& targets, double lr,
                  const std::string& batch_label = "batch");

  Network<T>& network() { return net_; }

 private:
  Network<T>& net_;
  SgdNesterov<T> optimizer_;
};

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0;
  double train_loss = 0;
  double train_mae = 0;
  double val_mae = 0;
  double val_rmse = 0;
  double elapsed = 0;

  /// epoch, lr, train_loss, train_MAE, val_MAE, val_RMSE, elapsed (tab separated).
  std::string to_line() const;
};

struct TrainResult {
  std::vector<EpochLog> history;
  std::size_t best_epoch = 0;
  double best_val_mae = 0;
  std::filesystem::path best_checkpoint;
  std::filesystem::path final_checkpoint;
  std::filesystem::path log_path;
};

/// Full epoch loop: sample and augment patches from `train`, shuffle each
/// epoch, step through batches, evaluate image-level MAE/RMSE on `validation`
/// after every epoch, and write best.ckpt, final.ckpt and train.log into
/// config.out_dir. `on_epoch` (optional) sees every log line as it is written.
template <typename T>
TrainResult train(const RunConfig& config, const Dataset& train, const Dataset& validation,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

}  // namespace mrf
