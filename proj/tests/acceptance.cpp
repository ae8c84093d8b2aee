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

// Acceptance run: one PASS/FAIL line per criterion; exit status 1 if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include "mrf/checkpoint.hpp"
#include "mrf/checks.hpp"
#include "mrf/evaluation.hpp"
#include "mrf/ops.hpp"
#include "mrf/training.hpp"
#include "shape_oracle.hpp"

using namespace mrf;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool passed = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      if (passed) detail << "failed: ";
      else detail << "; ";
      detail << what;
      passed = false;
    }
  }
};

ModelConfig tiny() {
  ModelConfig c;
  c.base_width = 8;
  c.rm_per_phase = {1, 1, 1};
  return c;
}

std::string shape_str(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

Tensor<float> filled(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(0.f, 1.f);
  std::vector<float> v(numel(s));
  for (auto& x : v) x = d(rng);
  return Tensor<float>(std::move(s), std::move(v));
}

void compare_trace(Outcome& o, const ShapeTrace& got, const std::vector<oracle::Entry>& want, const std::string& tag) {
  if (got.size() != want.size()) {
    o.require(false, tag + ": " + std::to_string(got.size()) + " traced stages, expected " + std::to_string(want.size()));
    return;
  }
  for (std::size_t i = 0; i < want.size(); ++i)
    o.require(got[i].first == want[i].first && got[i].second == want[i].second,
              tag + ": " + got[i].first + " " + shape_str(got[i].second) + " vs " + want[i].first + " " +
                  shape_str(want[i].second));
}

// 1. Stem and head shapes of the default model.
void shapes(Outcome& o) {
  Network<float> net(ModelConfig{}, 1);
  ShapeTrace trace;
  net.forward(random_priors<float>(ModelConfig{}, 1, 2), &trace);
  compare_trace(o, trace, oracle::default_trace_v5(), "v5");

  ModelConfig c;
  const auto specs = column_specs(c);
  std::vector<Tensor<float>> cols;
  for (int i = 0; i < 3; ++i)
    cols.push_back(filled(Shape{1, specs[i].channels, specs[i].resolution, specs[i].resolution}, i));
  for (int v = 1; v <= 4; ++v) {
    c.head_version = static_cast<HeadVersion>(v);
    Rng rng(5);
    FinalHead<float> head(c, rng);
    ShapeTrace t;
    head.forward(cols, false, &t);
    compare_trace(o, t, oracle::final_head_trace(v), "v" + std::to_string(v));
  }
  o.detail << trace.size() << " default stages + head chains v1-v4";
}

// 2. Column widths double and resolutions halve.
void column_law(Outcome& o) {
  for (std::size_t b : {8u, 16u, 32u}) {
    ModelConfig c;
    c.base_width = b;
    Network<float> net(c, 7);
    const auto& s = net.columns();
    o.require(s[0].channels == b && s[0].resolution == 64, "column 1 for b=" + std::to_string(b));
    for (int i = 1; i < 3; ++i)
      o.require(s[i].channels == 2 * s[i - 1].channels && 2 * s[i].resolution == s[i - 1].resolution,
                "column " + std::to_string(i + 1) + " for b=" + std::to_string(b));
    for (std::size_t p = 0; p < net.phase3.size(); ++p)
      for (int k = 0; k < 3; ++k)
        o.require(net.phase3[p][k].units[0].branch.back().conv.weight.size(0) == s[k].channels,
                  "phase3 module width for b=" + std::to_string(b));
  }
  if (o.passed) o.detail << "b in {8,16,32}";
}

// 3. All nine fusion pairs.
void fusion(Outcome& o) {
  const auto specs = column_specs(tiny());
  Rng rng(8);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      FusionTransform<float> t(specs[i], specs[j], rng);
      auto y = t.forward(filled(Shape{2, specs[i].channels, specs[i].resolution, specs[i].resolution}, 9), true);
      const std::string tag = "(" + std::to_string(i + 1) + "," + std::to_string(j + 1) + ")";
      o.require(y.shape() == Shape{2, specs[j].channels, specs[j].resolution, specs[j].resolution},
                tag + " produced " + shape_str(y.shape()));
      o.require(t.stride2_steps() == (j > i ? std::size_t(j - i) : 0u), tag + " stride-2 count");
    }
  FusionTransform<float> one_to_three(specs[0], specs[2], rng);
  o.require(one_to_three.stride2_steps() == 2, "(1,3) stride-2 count");
  if (o.passed) o.detail << "9 pairs conform; (1,3) uses " << one_to_three.stride2_steps() << " stride-2 convs";
}

// 4. Finite-difference suite in double precision.
void gradients(Outcome& o) {
  std::size_t n = 0;
  for (const auto& c : run_gradient_suite(0)) {
    o.require(c.passed, c.name + " " + c.detail);
    ++n;
  }
  if (o.passed) o.detail << n << " checks, rel. err < 1e-4";
}

// 5. Hand-evaluated arithmetic.
void arithmetic(Outcome& o) {
  const ModelConfig c;
  o.require(combine_counts(HeadOutputs{10, 10, 10, 100}, c.weights) == 73.0, "combine_counts");
  const double tl = total_loss({10, 10, 10, 0}, c.weights);
  o.require(std::abs(tl - 3.0) <= 4 * std::numeric_limits<double>::epsilon() * 3.0, "total_loss " + format_double(tl));
  auto m = compute_metrics({100, 200}, {120, 190});
  o.require(m.mae == 15.0, "MAE");
  o.require(m.rmse == std::sqrt(250.0), "RMSE");
  const double lr[] = {0.001, 0.0005, 0.00025, 0.000125};
  for (int k = 0; k < 4; ++k) o.require(lr_at_epoch(25 * k) == lr[k], "lr at epoch " + std::to_string(25 * k));
  if (o.passed) o.detail << "73, 3, (15, " << format_double(m.rmse) << "), lr breakpoints";
}

// 6. The tiny model memorises 64 synthetic patches.
void overfit(Outcome& o) {
  SynthOptions so;
  so.images = 64;
  so.width = so.height = 128;
  so.count_min = 0;
  so.count_max = 30;
  so.seed = 1;
  const auto d = synth_generate(so);
  std::vector<PatchTriplet> patches;
  double zero_mae = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    patches.push_back(make_priors(tile_image(d.images[i], d.annotations[i])[0]));
    zero_mae += static_cast<double>(patches.back().count) / 64;
  }
  Network<float> net(tiny(), 2);
  Trainer<float> trainer(net, 0.9, 1e-4);
  constexpr std::size_t kSteps = 300, kBatch = 4;
  std::mt19937_64 rng(3);
  std::vector<std::size_t> order(patches.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t pos = order.size();
  for (std::size_t s = 0; s < kSteps; ++s) {
    if (pos + kBatch > order.size()) {
      std::shuffle(order.begin(), order.end(), rng);
      pos = 0;
    }
    std::vector<const PatchTriplet*> batch;
    std::vector<double> y;
    for (std::size_t k = 0; k < kBatch; ++k, ++pos) {
      batch.push_back(&patches[order[pos]]);
      y.push_back(static_cast<double>(patches[order[pos]].count));
    }
    trainer.step(make_batch<float>(batch), y, 0.001, "step " + std::to_string(s));
  }
  std::vector<double> gt, pred;
  for (const auto& p : predict_patches(net, patches, 16)) pred.push_back(p.count);
  for (const auto& p : patches) gt.push_back(static_cast<double>(p.count));
  const double mae = compute_metrics(gt, pred).mae;
  o.require(mae < 2.0, "training MAE " + format_double(mae));
  o.detail << "training MAE " << mae << " after " << kSteps << " steps (zero predictor " << zero_mae << ")";
}

// 7. Ablation variants train one step with finite losses.
void ablations(Outcome& o) {
  const char* names[] = {"no I1", "no I3", "no aux heads", "rm 1,1,1", "rm 1,2,2", "rm 1,3,3"};
  for (int v = 0; v < 6; ++v) {
    auto c = tiny();
    if (v == 0) c.use_prior_i1 = false;
    if (v == 1) c.use_prior_i3 = false;
    if (v == 2) c.use_auxiliary_heads = false;
    if (v == 4) c.rm_per_phase = {1, 2, 2};
    if (v == 5) c.rm_per_phase = {1, 3, 3};
    Network<float> net(c, 10 + v);
    Trainer<float> trainer(net);
    auto r = trainer.step(random_priors<float>(c, 2, 20 + v), {3, 9}, 0.001);
    o.require(std::isfinite(r.loss), std::string(names[v]) + " loss " + format_double(r.loss));
  }
  if (o.passed) o.detail << "6 variants, finite losses";
}

// 8. Tiling conserves counts; image totals are sums of patch outputs.
void conservation(Outcome& o) {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<std::size_t> extent(100, 300);
  Network<float> net(tiny(), 3);
  std::size_t patches = 0;
  for (int k = 0; k < 100; ++k) {
    std::size_t w = extent(rng), h = extent(rng);
    if (w % 128 == 0) ++w;
    if (h % 128 == 0) ++h;
    SynthOptions so;
    so.images = 1;
    so.width = w;
    so.height = h;
    so.count_min = 0;
    so.count_max = 60;
    so.seed = 1000 + k;
    const auto d = synth_generate(so);
    std::size_t sum = 0;
    for (const auto& t : tile_image(d.images[0], d.annotations[0])) sum += t.count;
    o.require(sum == d.annotations[0].count(), "tile counts of image " + std::to_string(k));
    const auto p = predict_image(net, d.images[0], "", 16);
    double total = 0;
    for (const auto& patch : p.patches) total += patch.count;
    o.require(total == p.total, "predicted total of image " + std::to_string(k));
    patches += p.patches.size();
  }
  if (o.passed) o.detail << "100 images, " << patches << " patches";
}

// 9. Save, load, forward: bit-identical.
void checkpoint(Outcome& o) {
  const auto path = fs::temp_directory_path() / "mrf_acceptance.ckpt";
  Network<float> a(tiny(), 4);
  a.set_training(true);
  Trainer<float> trainer(a);
  trainer.step(random_priors<float>(tiny(), 4, 5), {1, 2, 3, 4}, 0.001);  // non-trivial BN statistics
  a.set_training(false);
  const auto batch = random_priors<float>(tiny(), 3, 6);
  const auto before = a.forward(batch);
  save_checkpoint(path, a, 1);
  Network<float> b(tiny(), 99);
  load_checkpoint_into(path, b);
  b.set_training(false);
  const auto after = b.forward(batch);
  std::size_t compared = 0;
  auto same = [&](const Tensor<float>& x, const Tensor<float>& y) {
    compared += x.numel();
    return std::equal(x.values().begin(), x.values().end(), y.values().begin(), y.values().end());
  };
  o.require(same(before.rh1, after.rh1) && same(before.rh2, after.rh2) && same(before.rh3, after.rh3) &&
                same(before.final, after.final),
            "outputs differ after reload");
  fs::remove(path);
  if (o.passed) o.detail << compared << " outputs bit-identical";
}

std::string strip_elapsed(const std::string& line) { return line.substr(0, line.rfind('\t')); }

std::string first_line(const fs::path& p) {
  std::ifstream in(p);
  std::string l;
  std::getline(in, l);
  return l;
}

// 10. Two identically seeded training runs log the same epoch 0.
void determinism(Outcome& o) {
  const auto root = fs::temp_directory_path() / "mrf_acceptance_det";
  fs::remove_all(root);
  SynthOptions so;
  so.images = 6;
  so.width = so.height = 160;
  so.count_min = 0;
  so.count_max = 20;
  so.seed = 9;
  auto d = synth_generate(so);
  const auto ann = write_dataset(root / "data", d);
  RunConfig rc;
  rc.model = tiny();
  rc.train_annotations = ann.string();
  rc.samples = 8;
  rc.batch_size = 4;
  rc.epochs = 1;
  rc.seed = 123;
  std::string lines[2];
#ifdef MRF_CLI_PATH
  {
    std::ofstream(root / "run.cfg") << format_run_config(rc);
    for (int r = 0; r < 2; ++r) {
      const auto out = root / ("run" + std::to_string(r));
      const std::string cmd = std::string("\"") + MRF_CLI_PATH + "\" train --threads 1 --config \"" +
                              (root / "run.cfg").string() + "\" --out \"" + out.string() + "\" > \"" +
                              (root / "cli.txt").string() + "\" 2>&1";
      const int status = std::system(cmd.c_str());
      o.require(status == 0, "train command exited with " + std::to_string(status));
      lines[r] = first_line(out / "train.log");
    }
    o.detail << "via mrfcount train; ";
  }
#else
  {
    auto all = load_dataset(ann);
    auto split = split_validation(all.size(), rc.val_fraction, rc.seed);
    for (int r = 0; r < 2; ++r) {
      rc.out_dir = (root / ("run" + std::to_string(r))).string();
      auto res = train<float>(rc, subset(all, split.train), subset(all, split.validation));
      lines[r] = first_line(res.log_path);
    }
  }
#endif
  o.require(!lines[0].empty(), "no epoch line");
  o.require(strip_elapsed(lines[0]) == strip_elapsed(lines[1]),
            "'" + strip_elapsed(lines[0]) + "' vs '" + strip_elapsed(lines[1]) + "'");
  if (o.passed) o.detail << "epoch 0: " << strip_elapsed(lines[0]);
  fs::remove_all(root);
}

}  // namespace

int main(int argc, char** argv) {
  set_num_threads(1);
  struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<void(Outcome&)> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "shape conformance", 10, shapes},
      {2, "column law", 10, column_law},
      {3, "fusion rules", 10, fusion},
      {4, "gradient suite", 300, gradients},
      {5, "exact arithmetic", 1, arithmetic},
      {6, "synthetic overfit", 900, overfit},
      {7, "ablation toggles", 120, ablations},
      {8, "count conservation", 60, conservation},
      {9, "checkpoint fidelity", 30, checkpoint},
      {10, "determinism", 120, determinism},
  };
  // Optional arguments select criteria by number.
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));
  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    char budget[96];
    std::snprintf(budget, sizeof budget, "%.1fs of %.0fs budget", secs, c.budget_s);
    o.require(secs < c.budget_s, "over time budget");
    failed += !o.passed;
    std::printf("%s criterion %d (%s): %s [%s]\n", o.passed ? "PASS" : "FAIL", c.id, c.name, o.detail.str().c_str(),
                budget);
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
