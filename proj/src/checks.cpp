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

#include "mrf/checks.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <sstream>

#include "mrf/ops.hpp"

namespace mrf {

namespace {

template <typename T>
Tensor<T> uniform(Shape shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return Tensor<T>(std::move(shape), std::move(v));
}

// Weighted sum of every head so that each output carries gradient.
Tensor<double> probe_loss(const HeadTensors<double>& h, const std::array<Tensor<double>, 4>& w) {
  return reduce_sum(add(add(mul(h.rh1, w[0]), mul(h.rh2, w[1])), add(mul(h.rh3, w[2]), mul(h.final, w[3]))));
}

std::string format_error(double e) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << e;
  return os.str();
}

CheckOutcome threshold(const std::string& name, double error, double tol) {
  return {name, error < tol, "max relative error " + format_error(error)};
}

}  // namespace

template <typename T>
PriorBatch<T> random_priors(const ModelConfig& config, std::size_t batch, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t p = config.patch_size;
  PriorBatch<T> b;
  b.i1 = uniform<T>(Shape{batch, 3, 2 * p, 2 * p}, rng, 0.0, 1.0);
  b.i2 = uniform<T>(Shape{batch, 3, p, p}, rng, 0.0, 1.0);
  b.i3 = uniform<T>(Shape{batch, 3, p / 2, p / 2}, rng, 0.0, 1.0);
  return b;
}

template PriorBatch<float> random_priors<float>(const ModelConfig&, std::size_t, std::uint64_t);
template PriorBatch<double> random_priors<double>(const ModelConfig&, std::size_t, std::uint64_t);

ModelGradientReport check_model_gradients(const ModelConfig& config, std::size_t batch, std::uint64_t seed,
                                          std::size_t max_tensors, double epsilon) {
  Network<double> net(config, seed);
  net.set_training(true);
  auto priors = random_priors<double>(config, batch, seed + 1);
  std::mt19937_64 rng(seed + 2);
  std::array<Tensor<double>, 4> w;
  for (auto& t : w) t = uniform<double>(Shape{batch, 1}, rng, 0.5, 1.5);

  std::vector<std::pair<std::string, Tensor<double>*>> targets;
  {
    std::vector<std::pair<std::string, Tensor<double>*>> trainable;
    auto params = net.parameters();
    for (auto& p : params) {
      if (p.trainable) trainable.emplace_back(p.name, p.tensor);
    }
    const std::size_t stride = std::max<std::size_t>(1, (trainable.size() + max_tensors - 1) / std::max<std::size_t>(max_tensors, 1));
    for (std::size_t i = 0; i < trainable.size(); i += stride) targets.push_back(trainable[i]);
    if (targets.back().second != trainable.back().second) targets.push_back(trainable.back());
  }
  priors.i2.set_requires_grad(true);
  targets.emplace_back("input.I2", &priors.i2);

  // Running statistics change on every training-mode pass; restore them so
  // every evaluation sees identical buffers.
  std::vector<std::pair<Tensor<double>*, std::vector<double>>> buffers;
  for (auto& p : net.parameters()) {
    if (!p.trainable) buffers.emplace_back(p.tensor, std::vector<double>(p.tensor->values().begin(), p.tensor->values().end()));
  }
  auto restore = [&] {
    for (auto& [t, v] : buffers) std::copy(v.begin(), v.end(), t->data().begin());
  };

  net.zero_grad();
  priors.i2.zero_grad();
  restore();
  probe_loss(net.forward(priors), w).backward();

  ModelGradientReport report;
  NoGradGuard no_grad;
  auto eval = [&] {
    restore();
    return probe_loss(net.forward(priors), w).item();
  };
  for (auto& [name, tensor] : targets) {
    auto g = tensor->grad();
    std::size_t idx = 0;
    for (std::size_t i = 1; i < g.size(); ++i) {
      if (std::abs(g[i]) > std::abs(g[idx])) idx = i;
    }
    auto values = tensor->data();
    const double saved = values[idx];
    values[idx] = saved + epsilon;
    const double plus = eval();
    values[idx] = saved - epsilon;
    const double minus = eval();
    values[idx] = saved;
    const double numeric = (plus - minus) / (2.0 * epsilon);
    GradCheckResult r{relative_error(g[idx], numeric), idx, g[idx], numeric, 1};
    report.tensors.push_back({name, r});
    if (report.tensors.size() == 1 || r.max_relative_error > report.max_relative_error) {
      report.max_relative_error = r.max_relative_error;
      report.worst = name;
    }
  }
  restore();
  return report;
}

std::vector<CheckOutcome> run_gradient_suite(std::uint64_t seed) {
  std::vector<CheckOutcome> out;
  std::mt19937_64 rng(seed);
  const double eps = 1e-6, tol = 1e-4;
  auto tensor = [&](Shape s, double lo = -1.0, double hi = 1.0) { return uniform<double>(std::move(s), rng, lo, hi); };

  {
    auto x = tensor({2, 2, 6, 5});
    auto w = tensor({3, 2, 3, 3});
    auto b = tensor({3});
    auto probe = tensor({2, 3, 3, 3});
    auto loss = [&] { return reduce_sum(mul(conv2d(x, w, b, 2, 1), probe)); };
    double e = std::max({finite_difference_check(loss, x, eps).max_relative_error,
                         finite_difference_check(loss, w, eps).max_relative_error,
                         finite_difference_check(loss, b, eps).max_relative_error});
    out.push_back(threshold("conv2d", e, tol));
  }
  {
    double e = 0;
    for (bool training : {true, false}) {
      auto x = tensor({2, 3, 3, 3});
      auto gamma = tensor({3}, 0.5, 1.5);
      auto beta = tensor({3});
      auto probe = tensor({2, 3, 3, 3});
      Tensor<double> rm(Shape{3}, 0.1), rv(Shape{3}, 1.3);
      auto loss = [&] {
        auto m = rm.detach(), v = rv.detach();
        return reduce_sum(mul(batch_norm(x, gamma, beta, m, v, training, 0.1, 1e-5), probe));
      };
      e = std::max({e, finite_difference_check(loss, x, eps).max_relative_error,
                    finite_difference_check(loss, gamma, eps).max_relative_error,
                    finite_difference_check(loss, beta, eps).max_relative_error});
    }
    out.push_back(threshold("batch_norm", e, tol));
  }
  {
    auto x = tensor({16}, 0.1, 1.0);
    auto values = x.data();
    for (std::size_t i = 0; i < values.size(); i += 2) values[i] = -values[i];
    auto probe = tensor({16});
    out.push_back(threshold(
        "relu", finite_difference_check([&] { return reduce_sum(mul(relu(x), probe)); }, x, eps).max_relative_error, tol));
  }
  {
    auto x = tensor({2, 2, 4, 6});
    auto pp = tensor({2, 2, 2, 3});
    auto pu = tensor({2, 2, 8, 12});
    out.push_back(threshold(
        "avg_pool2", finite_difference_check([&] { return reduce_sum(mul(avg_pool2(x), pp)); }, x, eps).max_relative_error,
        tol));
    out.push_back(threshold("bilinear_upsample",
                            finite_difference_check([&] { return reduce_sum(mul(bilinear_upsample(x, 2), pu)); }, x, eps)
                                .max_relative_error,
                            tol));
  }
  {
    auto x = tensor({3, 8});
    auto w = tensor({4, 8});
    auto b = tensor({4});
    auto probe = tensor({3, 4});
    auto loss = [&] { return reduce_sum(mul(fully_connected(x, w, b), probe)); };
    double e = std::max({finite_difference_check(loss, x, eps).max_relative_error,
                         finite_difference_check(loss, w, eps).max_relative_error,
                         finite_difference_check(loss, b, eps).max_relative_error});
    out.push_back(threshold("fully_connected", e, tol));
  }
  for (auto kind : {UnitKind::kTwoLayer, UnitKind::kThreeLayer}) {
    Rng layer_rng(seed + 7);
    ResidualUnit<double> unit(kind, 4, 8, layer_rng);
    auto x = tensor({2, 4, 3, 3});
    auto probe = tensor({2, 8, 3, 3});
    auto loss = [&] { return reduce_sum(mul(unit.forward(x, true), probe)); };
    double e = std::max(finite_difference_check(loss, x, eps).max_relative_error,
                        finite_difference_check(loss, unit.branch[1].conv.weight, eps).max_relative_error);
    out.push_back(threshold(kind == UnitKind::kTwoLayer ? "residual_unit.two_layer" : "residual_unit.three_layer", e, tol));
  }
  {
    ModelConfig tiny;
    tiny.base_width = 8;
    tiny.rm_per_phase = {1, 1, 1};
    // At full patch size a 1e-6 step pushes some of the ~10^5 pre-activations
    // fed by an early weight across the ReLU kink; the error then scales with the
    // step. 1e-8 keeps kink crossings out while double roundoff stays ~1e-8.
    auto report = check_model_gradients(tiny, 2, seed, 48, 1e-8);
    auto outcome = threshold("model.tiny", report.max_relative_error, tol);
    outcome.detail += " over " + std::to_string(report.tensors.size()) + " tensors (worst " + report.worst + ")";
    out.push_back(outcome);
  }
  return out;
}

std::vector<CheckOutcome> run_shape_suite() {
  std::vector<CheckOutcome> out;
  // Column law for several widths.
  for (std::size_t b : {8u, 16u, 32u}) {
    ModelConfig c;
    c.base_width = b;
    auto s = column_specs(c);
    bool ok = s[0].channels == b && s[0].resolution == c.patch_size / 2;
    for (int i = 1; i < 3; ++i) ok = ok && s[i].channels == 2 * s[i - 1].channels && 2 * s[i].resolution == s[i - 1].resolution;
    out.push_back({"column_law.base_width_" + std::to_string(b), ok, ""});
  }
  // Fusion transforms for every ordered column pair.
  {
    ModelConfig c;
    c.base_width = 8;
    auto specs = column_specs(c);
    Rng rng(1);
    bool ok = true;
    std::string detail;
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        FusionTransform<float> t(specs[i], specs[j], rng);
        Tensor<float> x(Shape{1, specs[i].channels, specs[i].resolution, specs[i].resolution}, 0.5f);
        const Shape expected{1, specs[j].channels, specs[j].resolution, specs[j].resolution};
        auto y = t.forward(x, false);
        if (y.shape() != expected) {
          ok = false;
          detail += "(" + std::to_string(i + 1) + "," + std::to_string(j + 1) + ") -> " + to_string(y.shape()) + "; ";
        }
        const std::size_t want = j > i ? static_cast<std::size_t>(j - i) : 0;
        if (t.stride2_steps() != want) {
          ok = false;
          detail += "(" + std::to_string(i + 1) + "," + std::to_string(j + 1) + ") stride-2 steps " +
                    std::to_string(t.stride2_steps()) + "; ";
        }
      }
    }
    out.push_back({"fusion_transforms", ok, detail});
  }
  // Traced forward of a small model: every column keeps its ColumnSpec.
  for (int v = 1; v <= 5; ++v) {
    ModelConfig c;
    c.base_width = 8;
    c.rm_per_phase = {1, 1, 1};
    c.head_version = static_cast<HeadVersion>(v);
    Network<float> net(c, 3);
    ShapeTrace trace;
    auto priors = random_priors<float>(c, 1, 4);
    net.forward(priors, &trace);
    auto specs = net.columns();
    bool ok = true;
    std::string detail;
    for (auto& [name, shape] : trace) {
      for (int col = 1; col <= 3; ++col) {
        const std::string suffix = ".col" + std::to_string(col);
        if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0 &&
            name.rfind("phase1.rm", 0) != 0) {
          const auto& s = specs[col - 1];
          if (shape != Shape{1, s.channels, s.resolution, s.resolution}) {
            ok = false;
            detail += name + " " + to_string(shape) + "; ";
          }
        }
      }
      if (name.ends_with(".output") && shape != Shape{1, 1}) {
        ok = false;
        detail += name + " " + to_string(shape) + "; ";
      }
    }
    out.push_back({"model_trace." + to_string(c.head_version), ok, detail});
  }
  return out;
}

std::vector<CheckOutcome> run_invariant_suite(std::uint64_t seed) {
  std::vector<CheckOutcome> out;
  {
    HeadOutputs h{10, 10, 10, 100};
    out.push_back({"combine_counts", std::abs(combine_counts(h, {0.1, 0.1, 0.1, 0.7}) - 73.0) < 1e-12, ""});
    HeadOutputs eq{4.5, 4.5, 4.5, 4.5};
    out.push_back({"combine_counts.equal_heads", std::abs(combine_counts(eq, {0.1, 0.1, 0.1, 0.7}) - 4.5) < 1e-12, ""});
  }
  ModelConfig tiny;
  tiny.base_width = 8;
  tiny.rm_per_phase = {1, 1, 1};
  {
    Network<float> net(tiny, seed);
    net.zero_parameters();
    auto heads = to_head_outputs(net.forward(random_priors<float>(tiny, 2, seed)));
    bool ok = true;
    for (auto& h : heads) ok = ok && h.cc_p1 == 0 && h.cc_p2 == 0 && h.cc_p3 == 0 && h.cc_final == 0;
    out.push_back({"zero_model_outputs", ok, ""});
  }
  {
    // Permuting a batch permutes its outputs in inference mode.
    Network<float> net(tiny, seed);
    auto p = random_priors<float>(tiny, 3, seed + 1);
    auto permute = [](const Tensor<float>& t) {
      const std::size_t per = t.numel() / 3;
      std::vector<float> v(t.numel());
      const std::size_t order[3] = {2, 0, 1};
      for (std::size_t i = 0; i < 3; ++i) std::copy_n(t.values().begin() + order[i] * per, per, v.begin() + i * per);
      return Tensor<float>(t.shape(), std::move(v));
    };
    PriorBatch<float> q{permute(p.i1), permute(p.i2), permute(p.i3)};
    auto a = to_head_outputs(net.forward(p));
    auto b = to_head_outputs(net.forward(q));
    const std::size_t order[3] = {2, 0, 1};
    bool ok = true;
    for (std::size_t i = 0; i < 3; ++i) {
      const auto& x = a[order[i]];
      const auto& y = b[i];
      for (auto [u, v] : {std::pair{x.cc_p1, y.cc_p1}, {x.cc_p2, y.cc_p2}, {x.cc_p3, y.cc_p3}, {x.cc_final, y.cc_final}}) {
        ok = ok && std::abs(u - v) <= 1e-5 * std::max(1.0, std::abs(u));
      }
    }
    out.push_back({"batch_permutation", ok, ""});
  }
  {
    // Ablation configurations stay runnable and finite.
    bool ok = true;
    std::string detail;
    for (int variant = 0; variant < 3; ++variant) {
      ModelConfig c = tiny;
      if (variant == 0) c.use_prior_i1 = false;
      if (variant == 1) c.use_prior_i3 = false;
      if (variant == 2) c.use_auxiliary_heads = false;
      Network<float> net(c, seed);
      net.set_training(true);
      auto h = net.forward(random_priors<float>(c, 2, seed));
      for (const auto* t : {&h.rh1, &h.rh2, &h.rh3, &h.final}) {
        if (t->shape() != Shape{2, 1}) ok = false;
        for (float v : t->values()) ok = ok && std::isfinite(v);
      }
      if (!ok) detail = "variant " + std::to_string(variant);
    }
    out.push_back({"ablation_configurations", ok, detail});
  }
  return out;
}

}  // namespace mrf
