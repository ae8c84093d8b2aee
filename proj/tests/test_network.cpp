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
#include <random>
#include <set>

#include "doctest.h"
#include "mrf/checks.hpp"
#include "mrf/network.hpp"
#include "shape_oracle.hpp"

using namespace mrf;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.base_width = 8;
  c.rm_per_phase = {1, 1, 1};
  return c;
}

Tensor<float> filled(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(0.f, 1.f);
  std::vector<float> v(numel(s));
  for (auto& x : v) x = d(rng);
  return Tensor<float>(std::move(s), std::move(v));
}

void zero_beta_and_weights(ParamList<float>& params) {
  for (auto& p : params) {
    if (!p.trainable) continue;
    if (p.name.ends_with(".gamma")) continue;
    for (auto& v : p.tensor->data()) v = 0.f;
  }
}

}  // namespace

TEST_CASE("configuration validation") {
  ModelConfig c;
  CHECK_NOTHROW(c.validate());
  c.weights = {0.2, 0.2, 0.2, 0.2};
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = ModelConfig{};
  c.base_width = 6;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = ModelConfig{};
  c.rm_per_phase = {1, 0, 2};
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = ModelConfig{};
  c.patch_size = 120;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  CHECK(parse_head_version("v4") == HeadVersion::kV4);
  CHECK(to_string(HeadVersion::kV2) == "v2");
  CHECK_THROWS_AS(parse_head_version("v6"), std::invalid_argument);
}

TEST_CASE("default model reproduces the stem and head shape tables") {
  Network<float> net(ModelConfig{}, 1);
  ShapeTrace trace;
  net.forward(random_priors<float>(ModelConfig{}, 1, 2), &trace);
  const auto expected = oracle::default_trace_v5();
  REQUIRE(trace.size() == expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) {
    INFO(expected[i].first);
    CHECK(trace[i].first == expected[i].first);
    CHECK(trace[i].second == expected[i].second);
  }
}

TEST_CASE("final head versions follow their chains") {
  ModelConfig c;
  const auto specs = column_specs(c);
  std::vector<Tensor<float>> cols;
  for (int i = 0; i < 3; ++i) cols.push_back(filled(Shape{1, specs[i].channels, specs[i].resolution, specs[i].resolution}, i));
  for (int v = 1; v <= 4; ++v) {
    c.head_version = static_cast<HeadVersion>(v);
    Rng rng(5);
    FinalHead<float> head(c, rng);
    ShapeTrace trace;
    head.forward(cols, false, &trace);
    const auto expected = oracle::final_head_trace(v);
    INFO("v" << v);
    REQUIRE(trace.size() == expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) {
      CHECK(trace[i].first == expected[i].first);
      CHECK(trace[i].second == expected[i].second);
    }
  }
}

TEST_CASE("auxiliary heads") {
  ModelConfig c;
  Rng rng(6);
  auto rh1 = make_auxiliary_head<float>(1, c, rng);
  auto rh2 = make_auxiliary_head<float>(2, c, rng);
  ShapeTrace t1, t2;
  rh1.forward(filled(Shape{1, 64, 32, 32}, 1), false, &t1, "rh1");
  rh2.forward(filled(Shape{1, 128, 16, 16}, 2), false, &t2, "rh2");
  CHECK(t1 == ShapeTrace{{"rh1.conv0", {1, 64, 16, 16}}, {"rh1.pool", {1, 64, 8, 8}}, {"rh1.hidden", {1, 1024}},
                         {"rh1.output", {1, 1}}});
  CHECK(t2 == ShapeTrace{{"rh2.conv0", {1, 64, 8, 8}}, {"rh2.hidden", {1, 1024}}, {"rh2.output", {1, 1}}});

  ParamList<float> params;
  rh2.collect("rh2", params);
  for (auto& p : params)
    if (p.trainable)
      for (auto& v : p.tensor->data()) v = 0.f;
  CHECK(rh2.forward(filled(Shape{1, 128, 16, 16}, 3), false, nullptr, "rh2").item() == 0.f);
  CHECK_THROWS_AS(rh1.forward(filled(Shape{1, 128, 16, 16}, 4), false, nullptr, "rh1"), ShapeError);
}

TEST_CASE("column law holds for several base widths") {
  for (std::size_t b : {8u, 16u, 32u}) {
    ModelConfig c;
    c.base_width = b;
    c.rm_per_phase = {1, 1, 1};
    Network<float> net(c, 7);
    const auto& s = net.columns();
    CHECK(s[0].channels == b);
    CHECK(s[0].resolution == 64);
    for (int i = 1; i < 3; ++i) {
      CHECK(s[i].channels == 2 * s[i - 1].channels);
      CHECK(2 * s[i].resolution == s[i - 1].resolution);
    }
    // Instantiated residual modules carry the column widths.
    CHECK(net.phase3[0][0].units[0].branch.back().conv.weight.size(0) == s[0].channels);
    CHECK(net.phase3[0][1].units[0].branch.back().conv.weight.size(0) == s[1].channels);
    CHECK(net.phase3[0][2].units[0].branch.back().conv.weight.size(0) == s[2].channels);
  }
}

TEST_CASE("fusion transforms conform to the target column") {
  auto c = tiny_config();
  const auto specs = column_specs(c);
  Rng rng(8);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      FusionTransform<float> t(specs[i], specs[j], rng);
      auto y = t.forward(filled(Shape{2, specs[i].channels, specs[i].resolution, specs[i].resolution}, 9), true);
      CHECK(y.shape() == Shape{2, specs[j].channels, specs[j].resolution, specs[j].resolution});
      CHECK(t.stride2_steps() == (j > i ? std::size_t(j - i) : 0u));
      if (i == j) CHECK(t.steps.empty());
      if (i > j) CHECK(t.upsample == (std::size_t{1} << (i - j)));
    }
  }
  FusionTransform<float> one_to_three(specs[0], specs[2], rng);
  CHECK(one_to_three.stride2_steps() == 2);
  CHECK(one_to_three.steps[0].conv.weight.size(0) == specs[0].channels);
  CHECK(one_to_three.steps[1].conv.weight.size(0) == specs[2].channels);

  FusionTransform<float> bad(specs[0], specs[1], rng);
  CHECK_THROWS_AS(bad.forward(filled(Shape{1, specs[1].channels, 32, 32}, 1), true), ShapeError);
}

TEST_CASE("fusion stages") {
  auto c = tiny_config();
  const auto specs = column_specs(c);
  Rng rng(10);
  SUBCASE("single column is the identity") {
    FusionStage<float> stage(specs, 1, rng);
    auto x = filled(Shape{1, specs[0].channels, 64, 64}, 11);
    auto y = stage.forward({x}, true);
    REQUIRE(y.size() == 1);
    CHECK(y[0].node() == x.node());
  }
  SUBCASE("zero columns stay zero with zero beta") {
    FusionStage<float> stage(specs, 2, rng);
    std::vector<Tensor<float>> in{Tensor<float>(Shape{2, specs[0].channels, 64, 64}),
                                  Tensor<float>(Shape{2, specs[1].channels, 32, 32})};
    auto y = stage.forward(in, true);
    for (std::size_t k = 0; k < 2; ++k) {
      CHECK(y[k].shape() == in[k].shape());
      for (float v : y[k].values()) CHECK(v == 0.f);
    }
  }
  SUBCASE("three columns keep their shapes") {
    FusionStage<float> stage(specs, 3, rng);
    std::vector<Tensor<float>> in;
    for (int i = 0; i < 3; ++i) in.push_back(filled(Shape{2, specs[i].channels, specs[i].resolution, specs[i].resolution}, 12 + i));
    auto y = stage.forward(in, true);
    for (int i = 0; i < 3; ++i) CHECK(y[i].shape() == in[i].shape());
    CHECK_THROWS_AS(stage.forward({in[0], in[1]}, true), ShapeError);
  }
}

TEST_CASE("zero-parameter model outputs zero") {
  Network<float> net(tiny_config(), 13);
  net.zero_parameters();
  for (bool training : {false, true}) {
    net.set_training(training);
    auto h = to_head_outputs(net.forward(random_priors<float>(tiny_config(), 2, 14)));
    for (auto& o : h) {
      CHECK(o.cc_p1 == 0);
      CHECK(o.cc_p2 == 0);
      CHECK(o.cc_p3 == 0);
      CHECK(o.cc_final == 0);
    }
  }
}

TEST_CASE("transition with the I3 prior disabled equals the bare transition") {
  auto c = tiny_config();
  c.use_prior_i3 = false;
  Network<float> net(c, 15);
  CHECK(net.stem3.layers.empty());
  ShapeTrace trace;
  net.forward(random_priors<float>(c, 1, 16), &trace);
  bool saw_zero_ic3 = false;
  for (auto& [name, shape] : trace) {
    if (name == "IC3") saw_zero_ic3 = shape == Shape{1, 32, 16, 16};
    CHECK(name != "I3");
  }
  CHECK(saw_zero_ic3);

  // With only column 2 non-zero, the transition sum is exactly its conv path.
  const auto specs = column_specs(c);
  auto col2 = filled(Shape{1, specs[1].channels, specs[1].resolution, specs[1].resolution}, 17);
  auto bare = net.transition3.forward(col2, false);
  auto summed = add(bare, Tensor<float>(bare.shape()));
  for (std::size_t i = 0; i < bare.numel(); ++i) CHECK(summed.at(i) == bare.at(i));
}

TEST_CASE("ablation configurations are runnable") {
  for (int variant = 0; variant < 6; ++variant) {
    auto c = tiny_config();
    if (variant == 0) c.use_prior_i1 = false;
    if (variant == 1) c.use_prior_i3 = false;
    if (variant == 2) c.use_auxiliary_heads = false;
    if (variant == 3) c.rm_per_phase = {1, 2, 2};
    if (variant == 4) c.rm_per_phase = {1, 3, 3};
    if (variant == 5) c.head_version = HeadVersion::kV4;
    Network<float> net(c, 18);
    net.set_training(true);
    auto h = net.forward(random_priors<float>(c, 2, 19));
    for (const auto* t : {&h.rh1, &h.rh2, &h.rh3, &h.final}) {
      CHECK(t->shape() == Shape{2, 1});
      for (float v : t->values()) CHECK(std::isfinite(v));
    }
    if (!c.use_auxiliary_heads) {
      for (float v : h.rh1.values()) CHECK(v == 0.f);
      CHECK(counting_weights(c) == std::array<double, 4>{0, 0, 0, 1});
    }
  }
}

TEST_CASE("shape errors name the stage") {
  auto c = tiny_config();
  Network<float> net(c, 20);
  auto p = random_priors<float>(c, 1, 21);
  p.i3 = Tensor<float>(Shape{1, 3, 32, 32});
  try {
    net.forward(p);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("I3") != std::string::npos);
  }
}

TEST_CASE("combine_counts") {
  const std::array<double, 4> w{0.1, 0.1, 0.1, 0.7};
  CHECK(combine_counts({10, 10, 10, 100}, w) == doctest::Approx(73.0).epsilon(1e-15));
  CHECK(combine_counts({0, 0, 0, 0}, w) == 0.0);
  std::mt19937_64 rng(22);
  std::uniform_real_distribution<double> d(-50, 500);
  for (int i = 0; i < 100; ++i) {
    const double v = d(rng);
    CHECK(combine_counts({v, v, v, v}, w) == doctest::Approx(v).epsilon(1e-12));
  }
}

TEST_CASE("inference is stable under batch permutation") {
  for (const auto& o : run_invariant_suite(23)) {
    INFO(o.name << " " << o.detail);
    CHECK(o.passed);
  }
}

TEST_CASE("parameters and copies") {
  Network<float> a(tiny_config(), 24), b(tiny_config(), 25);
  auto pa = a.parameters();
  std::set<std::string> names;
  for (auto& p : pa) names.insert(p.name);
  CHECK(names.size() == pa.size());
  b.copy_from(a);
  auto pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    CHECK(std::equal(pa[i].tensor->values().begin(), pa[i].tensor->values().end(), pb[i].tensor->values().begin()));
  }
  ModelConfig other = tiny_config();
  other.base_width = 16;
  Network<float> c(other, 1);
  CHECK_THROWS_AS(c.copy_from(a), std::invalid_argument);
}

TEST_CASE("full tiny model gradients match finite differences") {
  auto c = tiny_config();
  c.patch_size = 32;
  for (int v : {1, 4, 5}) {
    c.head_version = static_cast<HeadVersion>(v);
    auto report = check_model_gradients(c, 2, 26, 200);
    for (auto& t : report.tensors) {
      INFO(t.name << " analytic " << t.result.worst_analytic << " numeric " << t.result.worst_numeric);
      CHECK(t.result.max_relative_error < 1e-4);
    }
  }
}
