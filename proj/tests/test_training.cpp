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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "doctest.h"
#include "mrf/checkpoint.hpp"
#include "mrf/checks.hpp"
#include "mrf/evaluation.hpp"
#include "mrf/training.hpp"

using namespace mrf;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.base_width = 8;
  c.rm_per_phase = {1, 1, 1};
  return c;
}

Dataset small_dataset(std::size_t images, std::uint64_t seed, std::size_t extent = 128) {
  SynthOptions o;
  o.images = images;
  o.width = extent;
  o.height = extent;
  o.count_min = 0;
  o.count_max = 12;
  o.seed = seed;
  return synth_generate(o);
}

std::vector<PatchTriplet> first_patches(const Dataset& d) {
  std::vector<PatchTriplet> out;
  for (std::size_t i = 0; i < d.size(); ++i) out.push_back(make_priors(tile_image(d.images[i], d.annotations[i])[0]));
  return out;
}

}  // namespace

TEST_CASE("mse_loss") {
  CHECK(mse_loss({1, 2, 3}, {1, 2, 3}) == 0.0);
  CHECK(mse_loss({3}, {1}) == 4.0);
  CHECK(mse_loss({0, 2}, {1, 1}) == 1.0);
  CHECK_THROWS_AS(mse_loss({1, 2}, {1}), std::invalid_argument);
  CHECK_THROWS_AS(mse_loss({}, {}), std::invalid_argument);

  Tensor<double> p(Shape{2, 1}, {0, 2});
  p.set_requires_grad(true);
  auto l = mse_loss(p, {1, 1});
  CHECK(l.item() == 1.0);
  l.backward();
  // d/dp (1/N) sum (p - y)^2 = 2 (p - y) / N
  CHECK(p.grad()[0] == -1.0);
  CHECK(p.grad()[1] == 1.0);
  CHECK_THROWS_AS(mse_loss(p, {1.0}), ShapeError);
}

TEST_CASE("total_loss") {
  const std::array<double, 4> w{0.1, 0.1, 0.1, 0.7};
  CHECK(total_loss({1, 1, 1, 1}, w) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(total_loss({10, 10, 10, 0}, w) == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(total_loss({0, 0, 0, 0}, w) == 0.0);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> d(0, 100);
  for (int i = 0; i < 50; ++i) {
    const double v = d(rng);
    CHECK(total_loss({v, v, v, v}, w) == doctest::Approx(v).epsilon(1e-12));
  }
  std::array<Tensor<double>, 4> t{Tensor<double>::scalar(10), Tensor<double>::scalar(10), Tensor<double>::scalar(10),
                                  Tensor<double>::scalar(0)};
  CHECK(total_loss(t, w).item() == doctest::Approx(3.0));

  ModelConfig no_aux;
  no_aux.use_auxiliary_heads = false;
  CHECK(loss_weights(no_aux) == std::array<double, 4>{0, 0, 0, 1});
  CHECK(total_loss({5, 6, 7, 8}, loss_weights(no_aux)) == 8.0);
}

TEST_CASE("sgd_nesterov_step") {
  SUBCASE("hand-evaluated update") {
    Tensor<double> p(Shape{1}, {1.0});
    p.set_requires_grad(true);
    SgdNesterov<double> opt({{"p", &p, true}}, 0.9, 0.0);
    p.zero_grad();
    p.mutable_grad()[0] = 1.0;
    opt.step(0.1);
    CHECK(opt.velocities()[0][0] == 1.0);
    CHECK(p.at(0) == doctest::Approx(0.81).epsilon(1e-15));
  }
  SUBCASE("weight decay only") {
    Tensor<double> p(Shape{1}, {1.0});
    p.set_requires_grad(true);
    SgdNesterov<double> opt({{"p", &p, true}}, 0.0, 0.0001);
    p.zero_grad();
    opt.step(0.001);
    CHECK(p.at(0) == doctest::Approx(1.0 - 1e-7).epsilon(1e-15));
  }
  SUBCASE("zero gradient decays velocity") {
    Tensor<double> p(Shape{2}, {1.0, -2.0});
    p.set_requires_grad(true);
    SgdNesterov<double> opt({{"p", &p, true}}, 0.9, 0.0);
    p.zero_grad();
    p.mutable_grad()[0] = 1.0;
    opt.step(0.0);
    const double v0 = opt.velocities()[0][0];
    p.zero_grad();
    opt.step(0.0);
    CHECK(opt.velocities()[0][0] == doctest::Approx(0.9 * v0));
    CHECK(p.at(0) == 1.0);
    CHECK(p.at(1) == -2.0);
  }
  SUBCASE("zero learning rate leaves parameters unchanged") {
    Network<double> net(tiny(), 2);
    Trainer<double> trainer(net);
    auto params = net.parameters();
    std::vector<std::vector<double>> before;
    for (auto& p : params) before.emplace_back(p.tensor->values().begin(), p.tensor->values().end());
    trainer.step(random_priors<double>(tiny(), 2, 3), {3, 5}, 0.0);
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (!params[i].trainable) continue;
      CHECK(std::equal(before[i].begin(), before[i].end(), params[i].tensor->values().begin()));
    }
  }
  SUBCASE("missing gradient is rejected") {
    Tensor<double> p(Shape{1}, {1.0});
    p.set_requires_grad(true);
    SgdNesterov<double> opt({{"layer.weight", &p, true}});
    CHECK_THROWS_WITH_AS(opt.step(0.1), doctest::Contains("layer.weight"), TrainingError);
  }
}

TEST_CASE("lr_at_epoch") {
  CHECK(lr_at_epoch(0) == 0.001);
  CHECK(lr_at_epoch(24) == 0.001);
  CHECK(lr_at_epoch(25) == 0.0005);
  CHECK(lr_at_epoch(50) == 0.00025);
  CHECK(lr_at_epoch(75) == 0.000125);
  CHECK(lr_at_epoch(99) == 0.000125);
  CHECK_THROWS_AS(lr_at_epoch(100), std::out_of_range);
  double prev = lr_at_epoch(0);
  for (std::size_t e = 1; e < 100; ++e) {
    const double lr = lr_at_epoch(e);
    CHECK(lr > 0);
    CHECK(lr <= prev);
    CHECK((lr < prev) == (e % 25 == 0));
    prev = lr;
  }
}

TEST_CASE("split_validation") {
  auto s = split_validation(100, 0.1, 7);
  CHECK(s.train.size() == 90);
  CHECK(s.validation.size() == 10);
  std::set<std::size_t> all(s.train.begin(), s.train.end());
  for (auto v : s.validation) CHECK(all.insert(v).second);
  CHECK(all.size() == 100);
  auto again = split_validation(100, 0.1, 7);
  CHECK(again.validation == s.validation);
  CHECK(split_validation(100, 0.1, 8).validation != s.validation);
  CHECK(split_validation(2, 0.1, 1).validation.size() == 1);
  CHECK_THROWS_AS(split_validation(1, 0.1, 1), std::invalid_argument);
  CHECK_THROWS_AS(split_validation(10, 0.0, 1), std::invalid_argument);
}

TEST_CASE("non-finite losses abort with the batch named") {
  Network<float> net(tiny(), 4);
  Trainer<float> trainer(net);
  auto b = random_priors<float>(tiny(), 2, 5);
  CHECK_THROWS_WITH_AS(trainer.step(b, {1.0, std::nan("")}, 0.001, "epoch 3 batch 17"),
                       doctest::Contains("epoch 3 batch 17"), TrainingError);
}

TEST_CASE("loss on a fixed batch decreases over 50 steps") {
  auto data = small_dataset(4, 6);
  auto triplets = first_patches(data);
  std::vector<const PatchTriplet*> ptrs;
  std::vector<double> targets;
  for (auto& t : triplets) {
    ptrs.push_back(&t);
    targets.push_back(static_cast<double>(t.count));
  }
  Network<float> net(tiny(), 7);
  Trainer<float> trainer(net);
  const auto batch = make_batch<float>(ptrs);
  std::vector<double> losses;
  for (int i = 0; i < 50; ++i) losses.push_back(trainer.step(batch, targets, 0.001).loss);
  // Momentum allows single-step wiggles; descent is judged on 10-step block means.
  std::vector<double> blocks(5, 0.0);
  for (std::size_t i = 0; i < losses.size(); ++i) blocks[i / 10] += losses[i] / 10;
  INFO("first " << losses.front() << " last " << losses.back());
  CHECK(losses.back() < 0.5 * losses.front());
  for (std::size_t i = 1; i < blocks.size(); ++i) CHECK(blocks[i] < blocks[i - 1]);
}

TEST_CASE("disabled auxiliary heads contribute nothing to the loss") {
  auto c = tiny();
  c.use_auxiliary_heads = false;
  Network<float> net(c, 8);
  Trainer<float> trainer(net);
  auto r = trainer.step(random_priors<float>(c, 2, 9), {4, 6}, 0.0);
  CHECK(r.head_losses[0] == doctest::Approx(26.0));  // zero outputs against (4, 6)
  CHECK(r.loss == doctest::Approx(r.head_losses[3]).epsilon(1e-6));
}

TEST_CASE("train smoke run and reproducibility") {
  auto dir = fs::temp_directory_path() / "mrf_test_train";
  fs::remove_all(dir);
  auto data = small_dataset(4, 10);
  auto split = split_validation(data.size(), 0.25, 1);
  RunConfig rc;
  rc.model = tiny();
  rc.samples = 4;
  rc.batch_size = 4;
  rc.epochs = 1;
  rc.seed = 11;
  rc.out_dir = (dir / "a").string();
  std::vector<std::string> lines;
  auto a = train<float>(rc, subset(data, split.train), subset(data, split.validation),
                        [&](const EpochLog& e) { lines.push_back(e.to_line()); });
  REQUIRE(a.history.size() == 1);
  CHECK(fs::exists(a.best_checkpoint));
  CHECK(fs::exists(a.final_checkpoint));
  Network<float> loaded(rc.model, 0);
  CHECK(load_checkpoint_into(a.final_checkpoint, loaded).epoch == 0);
  std::ifstream log(a.log_path);
  std::string line;
  std::getline(log, line);
  CHECK(line == lines[0]);
  std::size_t tabs = std::count(line.begin(), line.end(), '\t');
  CHECK(tabs == 6);

  rc.out_dir = (dir / "b").string();
  auto b = train<float>(rc, subset(data, split.train), subset(data, split.validation));
  const auto& x = a.history[0];
  const auto& y = b.history[0];
  CHECK(x.train_loss == y.train_loss);
  CHECK(x.train_mae == y.train_mae);
  CHECK(x.val_mae == y.val_mae);
  CHECK(x.val_rmse == y.val_rmse);
}
