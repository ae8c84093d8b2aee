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

#include "doctest.h"
#include "mrf/evaluation.hpp"

using namespace mrf;

namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.base_width = 8;
  c.rm_per_phase = {1, 1, 1};
  return c;
}

}  // namespace

TEST_CASE("compute_metrics") {
  auto perfect = compute_metrics({3, 4}, {3, 4});
  CHECK(perfect.mae == 0);
  CHECK(perfect.rmse == 0);
  auto m = compute_metrics({100, 200}, {110, 190});
  CHECK(m.mae == 10);
  CHECK(m.rmse == 10);
  auto n = compute_metrics({100, 200}, {120, 190});
  CHECK(n.mae == 15);
  CHECK(n.rmse == doctest::Approx(std::sqrt(250.0)).epsilon(1e-15));
  CHECK(n.images == 2);
  CHECK_THROWS_AS(compute_metrics({}, {}), std::invalid_argument);
  CHECK_THROWS_AS(compute_metrics({1}, {1, 2}), std::invalid_argument);

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> d(0, 300);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> gt(20), pred(20);
    for (auto& v : gt) v = std::floor(d(rng));
    for (auto& v : pred) v = d(rng);
    auto a = compute_metrics(gt, pred);
    CHECK(a.rmse >= a.mae);
    CHECK(a.mae >= 0);
    std::vector<std::size_t> idx(20);
    for (std::size_t i = 0; i < 20; ++i) idx[i] = (i * 7) % 20;
    std::vector<double> g2, p2;
    for (auto i : idx) {
      g2.push_back(gt[i]);
      p2.push_back(pred[i]);
    }
    auto b = compute_metrics(g2, p2);
    CHECK(b.mae == doctest::Approx(a.mae).epsilon(1e-12));
    CHECK(b.rmse == doctest::Approx(a.rmse).epsilon(1e-12));
  }
}

TEST_CASE("predict_image") {
  SynthOptions o;
  o.images = 1;
  o.width = 300;
  o.height = 140;
  o.seed = 3;
  auto d = synth_generate(o);
  Network<float> net(tiny(), 4);

  SUBCASE("zero model predicts nothing") {
    net.zero_parameters();
    auto p = predict_image(net, d.images[0], "a");
    CHECK(p.total == 0);
    CHECK(p.patches.size() == 6);
  }
  SUBCASE("total is the sum of clamped patch counts") {
    auto p = predict_image(net, d.images[0], "a", 4);
    double sum = 0;
    for (auto& patch : p.patches) {
      CHECK(patch.count >= 0);
      CHECK(patch.count == std::max(0.0, combine_counts(patch.heads, tiny().weights)));
      sum += patch.count;
    }
    CHECK(p.total == sum);
    CHECK(p.patches[5].origin_x == 256);
    CHECK(p.patches[5].origin_y == 128);
    // Patches predicted one at a time agree with the batched image path.
    auto tiles = tile_image(d.images[0], d.annotations[0]);
    for (std::size_t i = 0; i < tiles.size(); ++i) {
      auto single = predict_patches(net, {make_priors(tiles[i])}, 1);
      CHECK(single[0].count == doctest::Approx(p.patches[i].count).epsilon(1e-5));
    }
    // Reversed processing order gives the same total.
    std::vector<PatchTriplet> reversed;
    for (auto it = tiles.rbegin(); it != tiles.rend(); ++it) reversed.push_back(make_priors(*it));
    double rsum = 0;
    for (auto& r : predict_patches(net, reversed, 4)) rsum += r.count;
    CHECK(rsum == doctest::Approx(p.total).epsilon(1e-6));
  }
  SUBCASE("single-patch image equals its patch count") {
    Image img(128, 128, 0.2f);
    auto p = predict_image(net, img);
    REQUIRE(p.patches.size() == 1);
    CHECK(p.total == p.patches[0].count);
  }
  SUBCASE("prediction leaves the training flag alone") {
    net.set_training(true);
    predict_image(net, d.images[0]);
    CHECK(net.training());
  }
}

TEST_CASE("evaluate and the prediction dump") {
  SynthOptions o;
  o.images = 3;
  o.width = 128;
  o.height = 128;
  o.count_min = 10;
  o.count_max = 20;
  o.seed = 5;
  auto d = synth_generate(o);
  Network<float> net(tiny(), 6);
  net.zero_parameters();
  auto ev = evaluate(net, d);
  double mean = 0;
  for (auto& a : d.annotations) mean += static_cast<double>(a.count());
  mean /= 3;
  CHECK(ev.metrics.mae == doctest::Approx(mean));

  auto path = std::filesystem::temp_directory_path() / "mrf_test_dump.tsv";
  write_prediction_dump(path, ev);
  std::ifstream in(path);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  REQUIRE(lines.size() == 4);
  CHECK(lines[0].rfind(d.annotations[0].image_id + "\t", 0) == 0);
  CHECK(lines[3].rfind("MAE\t", 0) == 0);
  CHECK(lines[3].find("\tRMSE\t") != std::string::npos);
  CHECK_THROWS_AS(evaluate(net, Dataset{}), std::invalid_argument);
}
