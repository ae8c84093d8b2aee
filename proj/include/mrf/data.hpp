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

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "mrf/image.hpp"
#include "mrf/network.hpp"

namespace mrf {

struct Point {
  double x = 0;
  double y = 0;
};

/// One annotated image. Points lie in the half-open box [0,width) x [0,height).
struct Annotation {
  std::string image_id;
  std::filesystem::path image_path;
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<Point> points;

  std::size_t count() const { return points.size(); }
};

class AnnotationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parses `<image-path>\t<width>\t<height>\t<x1>,<y1>;<x2>,<y2>;...`.
///
/// Relative image paths resolve against the annotation file's directory.
/// Blank lines and lines starting with '#' are skipped. Errors name the line.
std::vector<Annotation> load_annotations(const std::filesystem::path& path, bool require_images = true);

/// Writes annotations with image paths relative to the file's directory.
void save_annotations(const std::filesystem::path& path, const std::vector<Annotation>& annotations);

/// A square crop of an image with its ground-truth count.
struct PatchSample {
  std::size_t size = 0;
  std::vector<float> pixels;  // planar (3, size, size)
  std::size_t count = 0;
  std::string source_id;
  std::size_t origin_x = 0;
  std::size_t origin_y = 0;
};

/// The three input priors of one patch.
struct PatchTriplet {
  std::size_t size = 0;  // I2 extent
  std::vector<float> i1, i2, i3;
  std::size_t count = 0;
};

/// Number of points in [x0, x0+w) x [y0, y0+h).
std::size_t count_in_box(const std::vector<Point>& points, double x0, double y0, double w, double h);

/// Zero-pads right/bottom to a multiple of `patch` and tiles without overlap, row-major.
std::vector<PatchSample> tile_image(const Image& image, const Annotation& annotation, std::size_t patch = 128);

/// I1 = 2x bilinear upscale of I2, I3 = 2x bilinear downscale.
PatchTriplet make_priors(const PatchSample& sample);

/// Mirrors a planar (channels, height, width) buffer about the vertical axis.
std::vector<float> flip_planar(const std::vector<float>& pixels, std::size_t channels, std::size_t height,
                               std::size_t width);

PatchSample horizontal_flip(const PatchSample& sample);

/// Annotations with their decoded images.
struct Dataset {
  std::vector<Annotation> annotations;
  std::vector<Image> images;

  std::size_t size() const { return annotations.size(); }
};

Dataset load_dataset(const std::filesystem::path& annotation_path);

/// Crop sizes used for multi-scale sampling, relative to a patch of 128.
std::vector<std::size_t> crop_sizes(std::size_t patch);

/// Where a training crop comes from; pixels are materialised on demand.
struct CropSpec {
  std::size_t image = 0;
  std::size_t size = 0;  // side of the source crop before rescaling
  std::size_t origin_x = 0;
  std::size_t origin_y = 0;
  bool flip = false;
  std::size_t count = 0;
};

/// The crop positions behind sample_training_patches, in the same order.
std::vector<CropSpec> sample_crop_specs(const Dataset& dataset, std::size_t n, std::uint64_t seed,
                                        std::size_t patch = 128, bool augment = true);

/// Extracts, rescales to `patch` and optionally mirrors one crop.
PatchSample realize_crop(const Dataset& dataset, const CropSpec& spec, std::size_t patch = 128);

/// Draws n random crops (image uniform, crop size uniform over crop_sizes,
/// top-left corner uniform over positions that keep the crop inside the
/// image), rescales each to the patch extent, then appends the horizontal
/// flip of every crop. Returns 2n samples when `augment`, otherwise n.
std::vector<PatchSample> sample_training_patches(const Dataset& dataset, std::size_t n, std::uint64_t seed,
                                                 std::size_t patch = 128, bool augment = true);

struct SynthOptions {
  std::size_t images = 10;
  std::size_t width = 256;
  std::size_t height = 256;
  std::size_t count_min = 5;
  std::size_t count_max = 30;
  double blob_radius = 3.0;
  std::uint64_t seed = 0;
};

/// Dark images with bright Gaussian blobs; the blob centres are the annotations.
Dataset synth_generate(const SynthOptions& options);

/// Writes a dataset as `<dir>/images/NNNNN.png` plus `<dir>/annotations.txt`.
std::filesystem::path write_dataset(const std::filesystem::path& dir, Dataset& dataset);

/// Stacks triplets into a network batch.
template <typename T>
PriorBatch<T> make_batch(const std::vector<const PatchTriplet*>& triplets);

}  // namespace mrf
