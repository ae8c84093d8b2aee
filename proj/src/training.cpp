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

#include "mrf/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "mrf/checkpoint.hpp"
#include "mrf/evaluation.hpp"

namespace mrf {

double mse_loss(const std::vector<double>& p, const std::vector<double>& y) {
  if (p.size() != y.size()) throw std::invalid_argument("mse_loss: predictions and targets differ in length");
  if (p.empty()) throw std::invalid_argument("mse_loss: empty batch");
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - y[i]) * (p[i] - y[i]);
  return s / static_cast<double>(p.size());
}

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& predictions, const std::vector<double>& targets) {
  if (targets.empty()) throw std::invalid_argument("mse_loss: empty batch");
  if (predictions.numel() != targets.size()) {
    throw ShapeError("mse_loss: " + std::to_string(predictions.numel()) + " predictions for " +
                     std::to_string(targets.size()) + " targets");
  }
  std::vector<T> y(targets.begin(), targets.end());
  Tensor<T> diff = sub(predictions, Tensor<T>(predictions.shape(), std::move(y)));
  return scale(reduce_sum(mul(diff, diff)), static_cast<T>(1.0 / static_cast<double>(targets.size())));
}

double total_loss(const std::array<double, 4>& l, const std::array<double, 4>& w) {
  return w[0] * l[0] + w[1] * l[1] + w[2] * l[2] + w[3] * l[3];
}

template <typename T>
Tensor<T> total_loss(const std::array<Tensor<T>, 4>& l, const std::array<double, 4>& w) {
  Tensor<T> sum = scale(l[0], static_cast<T>(w[0]));
  for (std::size_t i = 1; i < 4; ++i) sum = add(sum, scale(l[i], static_cast<T>(w[i])));
  return sum;
}

std::array<double, 4> loss_weights(const ModelConfig& config) { return counting_weights(config); }

template <typename T>
SgdNesterov<T>::SgdNesterov(ParamList<T> params, double momentum, double weight_decay)
    : momentum_(momentum), weight_decay_(weight_decay) {
  for (auto& p : params) {
    if (!p.trainable) continue;
    velocity_.emplace_back(p.tensor->numel(), T{0});
    params_.push_back(p);
  }
}

template <typename T>
void SgdNesterov<T>::step(double lr) {
  for (const auto& p : params_) {
    if (!p.tensor->has_grad()) throw TrainingError("no gradient for trainable parameter " + p.name);
  }
  const T mu = static_cast<T>(momentum_), wd = static_cast<T>(weight_decay_), rate = static_cast<T>(lr);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto value = params_[i].tensor->data();
    auto grad = params_[i].tensor->grad();
    auto& v = velocity_[i];
    for (std::size_t k = 0; k < value.size(); ++k) {
      const T g = grad[k] + wd * value[k];
      v[k] = mu * v[k] + g;
      value[k] -= rate * (g + mu * v[k]);
    }
  }
}

double lr_at_epoch(std::size_t epoch, const LrSchedule& s) {
  if (epoch >= s.total_epochs) {
    throw std::out_of_range("epoch " + std::to_string(epoch) + " outside the schedule of " +
                            std::to_string(s.total_epochs) + " epochs");
  }
  if (s.halving_epochs == 0) throw std::invalid_argument("halving period must be positive");
  return s.initial * std::ldexp(1.0, -static_cast<int>(epoch / s.halving_epochs));
}

Split split_validation(std::size_t images, double fraction, std::uint64_t seed) {
  if (images < 2) throw std::invalid_argument("a validation split needs at least 2 source images");
  if (!(fraction > 0 && fraction < 1)) throw std::invalid_argument("validation fraction must lie in (0, 1)");
  std::vector<std::size_t> order(images);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), std::mt19937_64(seed));
  auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(images)));
  n_val = std::clamp<std::size_t>(n_val, 1, images - 1);
  Split s;
  s.validation.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(s.validation.begin(), s.validation.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

Dataset subset(const Dataset& d, const std::vector<std::size_t>& indices) {
  Dataset out;
  for (auto i : indices) {
    out.annotations.push_back(d.annotations.at(i));
    out.images.push_back(d.images.at(i));
  }
  return out;
}

template <typename T>
Trainer<T>::Trainer(Network<T>& network, double momentum, double weight_decay)
    : net_(network), optimizer_(network.parameters(), momentum, weight_decay) {}

template <typename T>
StepResult Trainer<T>::step(const PriorBatch<T>& batch, const std::vector<double>& targets, double lr,
                            const std::string& label) {
  net_.zero_grad();
  net_.set_training(true);
  const auto heads = net_.forward(batch);
  const std::array<Tensor<T>, 4> losses{mse_loss(heads.rh1, targets), mse_loss(heads.rh2, targets),
                                        mse_loss(heads.rh3, targets), mse_loss(heads.final, targets)};
  const auto loss = total_loss(losses, loss_weights(net_.config()));
  StepResult r;
  r.loss = static_cast<double>(loss.item());
  for (std::size_t i = 0; i < 4; ++i) r.head_losses[i] = static_cast<double>(losses[i].item());
  if (!std::isfinite(r.loss)) {
    throw TrainingError("non-finite loss (" + std::to_string(r.loss) + ") at " + label);
  }
  const auto weights = counting_weights(net_.config());
  for (const auto& h : to_head_outputs(heads)) r.counts.push_back(std::max(combine_counts(h, weights), 0.0));
  loss.backward();
  optimizer_.step(lr);
  return r;
}

std::string EpochLog::to_line() const {
  char elapsed_text[32];
  std::snprintf(elapsed_text, sizeof elapsed_text, "%.3f", elapsed);
  std::ostringstream os;
  os << epoch << '\t' << format_double(lr) << '\t' << format_double(train_loss) << '\t' << format_double(train_mae)
     << '\t' << format_double(val_mae) << '\t' << format_double(val_rmse) << '\t' << elapsed_text;
  return os.str();
}

template <typename T>
TrainResult train(const RunConfig& config, const Dataset& train_set, const Dataset& validation,
                  const std::function<void(const EpochLog&)>& on_epoch) {
  config.validate();
  if (validation.size() == 0) throw std::invalid_argument("training needs a non-empty validation set");
  const std::size_t patch = config.model.patch_size;
  const auto specs = sample_crop_specs(train_set, config.samples, config.seed, patch, config.augment_flip);

  Network<T> net(config.model, config.seed + 1);
  Trainer<T> trainer(net, config.momentum, config.weight_decay);
  std::mt19937_64 shuffle_rng(config.seed + 2);
  const LrSchedule schedule{config.lr, config.lr_halving_epochs, config.epochs};

  TrainResult result;
  const std::filesystem::path dir(config.out_dir);
  std::filesystem::create_directories(dir);
  result.best_checkpoint = dir / "best.ckpt";
  result.final_checkpoint = dir / "final.ckpt";
  result.log_path = dir / "train.log";
  std::ofstream log(result.log_path);
  if (!log) throw std::runtime_error("cannot write " + result.log_path.string());

  const auto start = std::chrono::steady_clock::now();
  std::vector<std::size_t> order(specs.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = lr_at_epoch(epoch, schedule);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0, abs_sum = 0;
    std::size_t seen = 0;
    for (std::size_t b = 0, first = 0; first < order.size(); ++b, first += config.batch_size) {
      const std::size_t last = std::min(order.size(), first + config.batch_size);
      std::vector<PatchTriplet> triplets;
      std::vector<double> targets;
      for (std::size_t k = first; k < last; ++k) {
        triplets.push_back(make_priors(realize_crop(train_set, specs[order[k]], patch)));
        targets.push_back(static_cast<double>(triplets.back().count));
      }
      std::vector<const PatchTriplet*> ptrs;
      for (const auto& t : triplets) ptrs.push_back(&t);
      const auto step = trainer.step(make_batch<T>(ptrs), targets, lr,
                                     "epoch " + std::to_string(epoch) + " batch " + std::to_string(b));
      loss_sum += step.loss * static_cast<double>(targets.size());
      for (std::size_t k = 0; k < targets.size(); ++k) abs_sum += std::abs(step.counts[k] - targets[k]);
      seen += targets.size();
    }
    const auto ev = evaluate(net, validation);
    EpochLog entry;
    entry.epoch = epoch;
    entry.lr = lr;
    entry.train_loss = loss_sum / static_cast<double>(seen);
    entry.train_mae = abs_sum / static_cast<double>(seen);
    entry.val_mae = ev.metrics.mae;
    entry.val_rmse = ev.metrics.rmse;
    entry.elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log << entry.to_line() << '\n' << std::flush;
    if (on_epoch) on_epoch(entry);
    result.history.push_back(entry);
    if (epoch == 0 || entry.val_mae < result.best_val_mae) {
      result.best_val_mae = entry.val_mae;
      result.best_epoch = epoch;
      save_checkpoint(result.best_checkpoint, net, epoch);
    }
  }
  save_checkpoint(result.final_checkpoint, net, config.epochs - 1);
  return result;
}

template Tensor<float> mse_loss<float>(const Tensor<float>&, const std::vector<double>&);
template Tensor<double> mse_loss<double>(const Tensor<double>&, const std::vector<double>&);
template Tensor<float> total_loss<float>(const std::array<Tensor<float>, 4>&, const std::array<double, 4>&);
template Tensor<double> total_loss<double>(const std::array<Tensor<double>, 4>&, const std::array<double, 4>&);
template class SgdNesterov<float>;
template class SgdNesterov<double>;
template class Trainer<float>;
template class Trainer<double>;
template TrainResult train<float>(const RunConfig&, const Dataset&, const Dataset&,
                                  const std::function<void(const EpochLog&)>&);
template TrainResult train<double>(const RunConfig&, const Dataset&, const Dataset&,
                                   const std::function<void(const EpochLog&)>&);

}  // namespace mrf
