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

// Python bindings: configuration, inference, losses, metrics and self-checks.
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "mrf/checkpoint.hpp"
#include "mrf/checks.hpp"
#include "mrf/config.hpp"
#include "mrf/evaluation.hpp"
#include "mrf/training.hpp"

namespace py = pybind11;
using namespace mrf;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

// (H, W, 3) array with values in [0, 1] -> planar image.
Image to_image(const FloatArray& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw std::invalid_argument("image must have shape (H, W, 3)");
  const auto h = static_cast<std::size_t>(a.shape(0)), w = static_cast<std::size_t>(a.shape(1));
  Image img(w, h);
  auto v = a.unchecked<3>();
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) img.at(c, y, x) = v(y, x, c);
  return img;
}

py::array_t<float> from_image(const Image& img) {
  py::array_t<float> out({img.height, img.width, std::size_t{3}});
  auto v = out.mutable_unchecked<3>();
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x) v(y, x, c) = img.at(c, y, x);
  return out;
}

Annotation to_annotation(const Image& img, const py::array_t<double, py::array::c_style | py::array::forcecast>& pts) {
  Annotation a;
  a.width = img.width;
  a.height = img.height;
  if (pts.size() == 0) return a;
  if (pts.ndim() != 2 || pts.shape(1) != 2) throw std::invalid_argument("points must have shape (N, 2)");
  auto v = pts.unchecked<2>();
  for (py::ssize_t i = 0; i < pts.shape(0); ++i) a.points.push_back({v(i, 0), v(i, 1)});
  return a;
}

py::dict heads_dict(const HeadOutputs& h) {
  py::dict d;
  d["rh1"] = h.cc_p1;
  d["rh2"] = h.cc_p2;
  d["rh3"] = h.cc_p3;
  d["final"] = h.cc_final;
  return d;
}

HeadOutputs heads_from(const std::array<double, 4>& v) { return {v[0], v[1], v[2], v[3]}; }

class PyNetwork {
 public:
  PyNetwork(const ModelConfig& config, std::uint64_t seed) : net_(config, seed) {}

  const ModelConfig& config() const { return net_.config(); }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto& p : net_.parameters())
      if (p.trainable) n += p.tensor->numel();
    return n;
  }

  void zero_parameters() { net_.zero_parameters(); }

  // Patches shaped (N, 3, P, P); returns per-patch dicts of head outputs and the clamped count.
  py::list predict_patches(const FloatArray& patches, std::size_t batch_size) {
    const auto p = net_.config().patch_size;
    if (patches.ndim() != 4 || patches.shape(1) != 3 || static_cast<std::size_t>(patches.shape(2)) != p ||
        static_cast<std::size_t>(patches.shape(3)) != p)
      throw std::invalid_argument("patches must have shape (N, 3, " + std::to_string(p) + ", " + std::to_string(p) + ")");
    std::vector<PatchTriplet> triplets;
    const float* data = patches.data();
    const std::size_t per = 3 * p * p;
    for (py::ssize_t i = 0; i < patches.shape(0); ++i) {
      PatchSample s;
      s.size = p;
      s.pixels.assign(data + i * per, data + (i + 1) * per);
      triplets.push_back(make_priors(s));
    }
    std::vector<PatchPrediction> preds;
    {
      py::gil_scoped_release release;
      preds = mrf::predict_patches(net_, triplets, batch_size);
    }
    py::list out;
    for (const auto& pr : preds) {
      auto d = heads_dict(pr.heads);
      d["count"] = pr.count;
      out.append(d);
    }
    return out;
  }

  py::dict predict_image(const FloatArray& image, std::size_t batch_size) {
    const Image img = to_image(image);
    ImagePrediction p;
    {
      py::gil_scoped_release release;
      p = mrf::predict_image(net_, img, "", batch_size);
    }
    py::list patches;
    for (const auto& pp : p.patches) patches.append(py::make_tuple(pp.origin_x, pp.origin_y, pp.count));
    py::dict d;
    d["total"] = p.total;
    d["patches"] = patches;
    return d;
  }

  std::vector<std::pair<std::string, std::vector<std::size_t>>> shape_trace(std::uint64_t seed) {
    ShapeTrace trace;
    const bool was = net_.training();
    net_.set_training(false);
    net_.forward(random_priors<float>(net_.config(), 1, seed), &trace);
    net_.set_training(was);
    std::vector<std::pair<std::string, std::vector<std::size_t>>> out;
    for (auto& [name, shape] : trace) out.emplace_back(name, std::vector<std::size_t>(shape.begin(), shape.end()));
    return out;
  }

  void save(const std::filesystem::path& path, std::size_t epoch) { save_checkpoint(path, net_, epoch); }
  std::size_t load(const std::filesystem::path& path) { return load_checkpoint_into(path, net_).epoch; }

 private:
  Network<float> net_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multi-resolution fusion crowd counting";

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("base_width", &ModelConfig::base_width)
      .def_readwrite("rm_per_phase", &ModelConfig::rm_per_phase)
      .def_property(
          "head_version", [](const ModelConfig& c) { return static_cast<int>(c.head_version); },
          [](ModelConfig& c, int v) {
            if (v < 1 || v > 5) throw py::value_error("head_version must be 1..5");
            c.head_version = static_cast<HeadVersion>(v);
          })
      .def_readwrite("weights", &ModelConfig::weights)
      .def_readwrite("use_prior_i1", &ModelConfig::use_prior_i1)
      .def_readwrite("use_prior_i3", &ModelConfig::use_prior_i3)
      .def_readwrite("use_auxiliary_heads", &ModelConfig::use_auxiliary_heads)
      .def_readwrite("patch_size", &ModelConfig::patch_size)
      .def("validate", &ModelConfig::validate)
      .def("__eq__", [](const ModelConfig& a, const ModelConfig& b) { return a == b; })
      .def("__repr__", [](const ModelConfig& c) { return format_model_config(c); });

  m.def(
      "column_specs",
      [](const ModelConfig& c) {
        std::vector<std::pair<std::size_t, std::size_t>> out;
        for (const auto& s : column_specs(c)) out.emplace_back(s.channels, s.resolution);
        return out;
      },
      py::arg("config"), "(channels, resolution) of the three columns.");

  py::class_<PyNetwork>(m, "Network")
      .def(py::init<const ModelConfig&, std::uint64_t>(), py::arg("config"), py::arg("seed") = 0)
      .def_property_readonly("config", &PyNetwork::config)
      .def("parameter_count", &PyNetwork::parameter_count)
      .def("zero_parameters", &PyNetwork::zero_parameters)
      .def("predict_patches", &PyNetwork::predict_patches, py::arg("patches"), py::arg("batch_size") = 16)
      .def("predict_image", &PyNetwork::predict_image, py::arg("image"), py::arg("batch_size") = 16)
      .def("shape_trace", &PyNetwork::shape_trace, py::arg("seed") = 0)
      .def("save", &PyNetwork::save, py::arg("path"), py::arg("epoch") = 0)
      .def("load", &PyNetwork::load, py::arg("path"), "Loads a checkpoint; returns its epoch.");

  m.def(
      "combine_counts",
      [](const std::array<double, 4>& heads, const std::array<double, 4>& weights) {
        return combine_counts(heads_from(heads), weights);
      },
      py::arg("heads"), py::arg("weights") = std::array<double, 4>{0.1, 0.1, 0.1, 0.7});
  m.def(
      "mse_loss", [](const std::vector<double>& p, const std::vector<double>& t) { return mse_loss(p, t); },
        py::arg("predictions"), py::arg("targets"));
  m.def(
      "total_loss",
      [](const std::array<double, 4>& l, const std::array<double, 4>& w) { return total_loss(l, w); },
        py::arg("losses"), py::arg("weights") = std::array<double, 4>{0.1, 0.1, 0.1, 0.7});
  m.def(
      "compute_metrics",
      [](const std::vector<double>& gt, const std::vector<double>& pred) {
        auto r = compute_metrics(gt, pred);
        py::dict d;
        d["mae"] = r.mae;
        d["rmse"] = r.rmse;
        d["images"] = r.images;
        return d;
      },
      py::arg("ground_truth"), py::arg("predicted"));
  m.def(
      "lr_at_epoch",
      [](std::size_t epoch, double initial, std::size_t halving, std::size_t total) {
        return lr_at_epoch(epoch, LrSchedule{initial, halving, total});
      },
      py::arg("epoch"), py::arg("initial") = 0.001, py::arg("halving_epochs") = 25, py::arg("total_epochs") = 100);

  m.def(
      "synth_generate",
      [](std::size_t images, std::size_t width, std::size_t height, std::size_t count_min, std::size_t count_max,
         std::uint64_t seed) {
        SynthOptions o;
        o.images = images;
        o.width = width;
        o.height = height;
        o.count_min = count_min;
        o.count_max = count_max;
        o.seed = seed;
        const auto d = synth_generate(o);
        py::list out;
        for (std::size_t i = 0; i < d.size(); ++i) {
          py::array_t<double> pts({d.annotations[i].points.size(), std::size_t{2}});
          auto v = pts.mutable_unchecked<2>();
          for (std::size_t k = 0; k < d.annotations[i].points.size(); ++k) {
            v(k, 0) = d.annotations[i].points[k].x;
            v(k, 1) = d.annotations[i].points[k].y;
          }
          out.append(py::make_tuple(from_image(d.images[i]), pts));
        }
        return out;
      },
      py::arg("images") = 10, py::arg("width") = 256, py::arg("height") = 256, py::arg("count_min") = 5,
      py::arg("count_max") = 30, py::arg("seed") = 0, "List of (image (H, W, 3), points (N, 2)).");

  m.def(
      "tile_counts",
      [](const FloatArray& image, const py::array_t<double, py::array::c_style | py::array::forcecast>& points,
         std::size_t patch) {
        const Image img = to_image(image);
        std::vector<std::tuple<std::size_t, std::size_t, std::size_t>> out;
        for (const auto& t : tile_image(img, to_annotation(img, points), patch))
          out.emplace_back(t.origin_x, t.origin_y, t.count);
        return out;
      },
      py::arg("image"), py::arg("points"), py::arg("patch") = 128, "(origin_x, origin_y, count) per tile.");

  m.def(
      "format_run_config", [](const std::string& text) { return format_run_config(parse_run_config(text)); },
      py::arg("text"), "Parses a run configuration and returns its canonical text.");

  m.def(
      "train",
      [](const std::string& config_text, const std::function<void(std::string)>& on_epoch) {
        const RunConfig rc = parse_run_config(config_text);
        rc.validate();
        Dataset all = load_dataset(rc.train_annotations);
        Dataset tr, val;
        if (!rc.val_annotations.empty()) {
          tr = std::move(all);
          val = load_dataset(rc.val_annotations);
        } else {
          auto s = split_validation(all.size(), rc.val_fraction, rc.seed);
          tr = subset(all, s.train);
          val = subset(all, s.validation);
        }
        std::function<void(const EpochLog&)> cb;
        if (on_epoch)
          cb = [&](const EpochLog& e) {
            py::gil_scoped_acquire acquire;
            on_epoch(e.to_line());
          };
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = rc.precision == Precision::kFloat64 ? train<double>(rc, tr, val, cb) : train<float>(rc, tr, val, cb);
        }
        py::dict d;
        std::vector<std::string> lines;
        for (const auto& e : r.history) lines.push_back(e.to_line());
        d["history"] = lines;
        d["best_epoch"] = r.best_epoch;
        d["best_val_mae"] = r.best_val_mae;
        d["best_checkpoint"] = r.best_checkpoint;
        d["final_checkpoint"] = r.final_checkpoint;
        return d;
      },
      py::arg("config_text"), py::arg("on_epoch") = std::function<void(std::string)>{},
      "Runs the training loop described by a run configuration; returns the history.");

  m.def(
      "run_checks",
      [](const std::string& suite, std::uint64_t seed) {
        std::vector<CheckOutcome> all;
        {
          py::gil_scoped_release release;
          if (suite == "shapes" || suite == "all") {
            auto v = run_shape_suite();
            all.insert(all.end(), v.begin(), v.end());
          }
          if (suite == "invariants" || suite == "all") {
            auto v = run_invariant_suite(seed);
            all.insert(all.end(), v.begin(), v.end());
          }
          if (suite == "gradients" || suite == "all") {
            auto v = run_gradient_suite(seed);
            all.insert(all.end(), v.begin(), v.end());
          }
        }
        if (all.empty()) throw py::value_error("unknown suite '" + suite + "'");
        std::vector<std::tuple<std::string, bool, std::string>> out;
        for (auto& c : all) out.emplace_back(c.name, c.passed, c.detail);
        return out;
      },
      py::arg("suite") = "shapes", py::arg("seed") = 0, "(name, passed, detail) per check.");

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);
}
