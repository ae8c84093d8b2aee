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

// mrfcount: synthesize data, train, evaluate, predict and self-check.
#include <CLI11.hpp>

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "mrf/checkpoint.hpp"
#include "mrf/checks.hpp"
#include "mrf/config.hpp"
#include "mrf/evaluation.hpp"
#include "mrf/ops.hpp"
#include "mrf/training.hpp"

namespace fs = std::filesystem;
using namespace mrf;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kRuntime = 2;
constexpr int kCheckFailed = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config;
  std::string checkpoint;
  std::string out;
  std::optional<std::uint64_t> seed;
  int threads = 1;

  // synth
  std::size_t images = 10;
  std::size_t size = 256;
  std::string count = "5..30";
  std::size_t blob_radius = 3;

  // eval / predict
  std::string data;
  bool zero_model = false;
  std::vector<std::string> inputs;

  // check
  std::string suite = "all";
};

std::pair<std::size_t, std::size_t> parse_range(const std::string& s) {
  const auto dots = s.find("..");
  if (dots == std::string::npos) throw UsageError("--count expects A..B, got '" + s + "'");
  std::size_t a = 0, b = 0;
  const char* p = s.data();
  auto ra = std::from_chars(p, p + dots, a);
  auto rb = std::from_chars(p + dots + 2, p + s.size(), b);
  if (ra.ec != std::errc() || ra.ptr != p + dots || rb.ec != std::errc() || rb.ptr != p + s.size())
    throw UsageError("--count expects A..B with non-negative integers, got '" + s + "'");
  if (a > b) throw UsageError("--count range is empty: " + s);
  return {a, b};
}

RunConfig effective_config(const Options& o) {
  if (o.config.empty()) throw UsageError("--config is required");
  RunConfig rc = load_run_config(o.config);
  if (o.seed) rc.seed = *o.seed;
  if (!o.out.empty()) rc.out_dir = o.out;
  rc.validate();
  std::cout << "# effective config\n" << format_run_config(rc) << std::flush;
  return rc;
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw UsageError(std::string(what) + " is not set");
  if (!fs::exists(path)) throw std::runtime_error(std::string(what) + " not found: " + path);
}

int cmd_synth(const Options& o) {
  if (o.out.empty()) throw UsageError("--out is required");
  const auto [lo, hi] = parse_range(o.count);
  SynthOptions s;
  s.images = o.images;
  s.width = s.height = o.size;
  s.count_min = lo;
  s.count_max = hi;
  s.blob_radius = o.blob_radius;
  s.seed = o.seed.value_or(0);
  auto dataset = synth_generate(s);
  const auto ann = write_dataset(o.out, dataset);
  std::cout << "wrote " << dataset.size() << " images and " << ann.string() << "\n";
  return kOk;
}

template <typename T>
int run_train(const RunConfig& rc) {
  require_file(rc.train_annotations, "train_annotations");
  Dataset all = load_dataset(rc.train_annotations);
  Dataset train_set, val_set;
  if (!rc.val_annotations.empty()) {
    require_file(rc.val_annotations, "val_annotations");
    train_set = std::move(all);
    val_set = load_dataset(rc.val_annotations);
  } else {
    auto split = split_validation(all.size(), rc.val_fraction, rc.seed);
    train_set = subset(all, split.train);
    val_set = subset(all, split.validation);
  }
  std::cout << "# train images " << train_set.size() << ", validation images " << val_set.size() << "\n";
  std::cout << "# epoch\tlr\ttrain_loss\ttrain_MAE\tval_MAE\tval_RMSE\telapsed\n";
  auto result = train<T>(rc, train_set, val_set, [](const EpochLog& e) { std::cout << e.to_line() << std::endl; });
  std::cout << "best epoch " << result.best_epoch << " (val MAE " << format_double(result.best_val_mae) << ")\n"
            << "checkpoints " << result.best_checkpoint.string() << " " << result.final_checkpoint.string() << "\n";
  return kOk;
}

template <typename T>
Network<T> load_model(const RunConfig& rc, const Options& o) {
  Network<T> net(rc.model, rc.seed + 1);
  if (o.zero_model) {
    net.zero_parameters();
  } else {
    if (o.checkpoint.empty()) throw UsageError("--checkpoint (or --zero-model) is required");
    load_checkpoint_into(o.checkpoint, net);
  }
  return net;
}

std::string dataset_path(const RunConfig& rc, const Options& o) {
  const std::string path = o.data.empty() ? rc.test_annotations : o.data;
  require_file(path, "test annotations (--data or test_annotations)");
  return path;
}

template <typename T>
int run_eval(const RunConfig& rc, const Options& o) {
  auto net = load_model<T>(rc, o);
  auto ev = evaluate(net, load_dataset(dataset_path(rc, o)));
  std::cout << "images\t" << ev.metrics.images << "\nMAE\t" << format_double(ev.metrics.mae) << "\nRMSE\t"
            << format_double(ev.metrics.rmse) << "\n";
  return kOk;
}

template <typename T>
int run_predict(const RunConfig& rc, const Options& o) {
  auto net = load_model<T>(rc, o);
  if (!o.inputs.empty()) {
    for (const auto& path : o.inputs) {
      auto p = predict_image(net, read_image(path), path);
      std::cout << path << "\t" << format_double(p.total) << "\n";
    }
    return kOk;
  }
  auto ev = evaluate(net, load_dataset(dataset_path(rc, o)));
  fs::create_directories(rc.out_dir);
  const fs::path dump = fs::path(rc.out_dir) / "predictions.tsv";
  write_prediction_dump(dump, ev);
  std::cout << "wrote " << dump.string() << " (MAE " << format_double(ev.metrics.mae) << ", RMSE "
            << format_double(ev.metrics.rmse) << ")\n";
  return kOk;
}

template <template <typename> class F, typename... Args>
int dispatch(Precision p, Args&&... args) {
  return p == Precision::kFloat64 ? F<double>::run(std::forward<Args>(args)...)
                                  : F<float>::run(std::forward<Args>(args)...);
}

template <typename T>
struct TrainCmd {
  static int run(const RunConfig& rc, const Options&) { return run_train<T>(rc); }
};
template <typename T>
struct EvalCmd {
  static int run(const RunConfig& rc, const Options& o) { return run_eval<T>(rc, o); }
};
template <typename T>
struct PredictCmd {
  static int run(const RunConfig& rc, const Options& o) { return run_predict<T>(rc, o); }
};

int cmd_check(const Options& o) {
  const std::uint64_t seed = o.seed.value_or(0);
  std::vector<CheckOutcome> outcomes;
  auto add = [&](std::vector<CheckOutcome> v) { outcomes.insert(outcomes.end(), v.begin(), v.end()); };
  const std::string& s = o.suite;
  if (s != "gradients" && s != "shapes" && s != "invariants" && s != "all")
    throw UsageError("unknown suite '" + s + "' (gradients, shapes, invariants, all)");
  if (s == "shapes" || s == "all") add(run_shape_suite());
  if (s == "invariants" || s == "all") add(run_invariant_suite(seed));
  if (s == "gradients" || s == "all") add(run_gradient_suite(seed));
  std::size_t failed = 0;
  for (const auto& c : outcomes) {
    std::cout << (c.passed ? "ok   " : "FAIL ") << c.name;
    if (!c.detail.empty()) std::cout << "  " << c.detail;
    std::cout << "\n";
    failed += !c.passed;
  }
  std::cout << outcomes.size() - failed << "/" << outcomes.size() << " checks passed\n";
  return failed ? kCheckFailed : kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-resolution crowd counting"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("--threads", o.threads, "Worker threads (1 is bit-reproducible)")->check(CLI::PositiveNumber);

  auto seed_opt = [&](CLI::App* c) {
    c->add_option_function<std::uint64_t>("--seed", [&](const std::uint64_t& v) { o.seed = v; }, "Random seed");
  };

  auto* synth = app.add_subcommand("synth", "Generate a synthetic point-annotated dataset");
  synth->add_option("--images", o.images, "Number of images")->check(CLI::PositiveNumber);
  synth->add_option("--size", o.size, "Square image extent in pixels")->check(CLI::PositiveNumber);
  synth->add_option("--count", o.count, "Per-image count range A..B");
  synth->add_option("--blob-radius", o.blob_radius, "Blob radius in pixels")->check(CLI::PositiveNumber);
  synth->add_option("--out", o.out, "Output directory")->required();
  seed_opt(synth);

  auto* train_cmd = app.add_subcommand("train", "Train a model");
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on annotated images");
  auto* predict_cmd = app.add_subcommand("predict", "Predict counts and write the prediction dump");
  for (auto* c : {train_cmd, eval_cmd, predict_cmd}) {
    c->add_option("--config", o.config, "Run configuration file")->required();
    c->add_option("--out", o.out, "Override out_dir");
    seed_opt(c);
  }
  for (auto* c : {eval_cmd, predict_cmd}) {
    c->add_option("--checkpoint", o.checkpoint, "Checkpoint file");
    c->add_flag("--zero-model", o.zero_model, "Use an all-zero model instead of a checkpoint");
    c->add_option("--data", o.data, "Annotation file (default: test_annotations)");
  }
  predict_cmd->add_option("images", o.inputs, "Image files to count (prints totals instead of a dump)");

  auto* check = app.add_subcommand("check", "Run built-in gradient, shape and invariant suites");
  check->add_option("--suite", o.suite, "gradients | shapes | invariants | all");
  seed_opt(check);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  set_num_threads(o.threads);
  try {
    if (*synth) return cmd_synth(o);
    if (*check) return cmd_check(o);
    const RunConfig rc = effective_config(o);
    if (*train_cmd) return dispatch<TrainCmd>(rc.precision, rc, o);
    if (*eval_cmd) return dispatch<EvalCmd>(rc.precision, rc, o);
    return dispatch<PredictCmd>(rc.precision, rc, o);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
}
