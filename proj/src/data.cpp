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

#include "mrf/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "mrf/ops.hpp"

namespace mrf {

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

template <typename V>
bool parse_number(const std::string& text, V& out) {
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  return ec == std::errc() && ptr == end;
}

std::string format_coord(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

// Crop of `image` at (x0, y0) with side `size`, zero outside the image.
std::vector<float> crop(const Image& image, std::size_t x0, std::size_t y0, std::size_t size) {
  std::vector<float> out(3 * size * size, 0.f);
  const std::size_t w = x0 < image.width ? std::min(size, image.width - x0) : 0;
  const std::size_t h = y0 < image.height ? std::min(size, image.height - y0) : 0;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h; ++y)
      std::copy_n(&image.pixels[(c * image.height + y0 + y) * image.width + x0], w, &out[(c * size + y) * size]);
  return out;
}

}  // namespace

std::vector<Annotation> load_annotations(const std::filesystem::path& path, bool require_images) {
  std::ifstream in(path);
  if (!in) throw AnnotationError("cannot open annotation file " + path.string());
  const auto base = path.parent_path();
  std::vector<Annotation> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const std::string where = path.string() + ":" + std::to_string(lineno) + ": ";
    auto fields = split(line, '\t');
    if (fields.size() == 3) fields.emplace_back();
    if (fields.size() != 4) throw AnnotationError(where + "expected 4 tab-separated fields, got " + std::to_string(fields.size()));
    Annotation a;
    a.image_id = fields[0];
    a.image_path = std::filesystem::path(fields[0]).is_absolute() ? std::filesystem::path(fields[0]) : base / fields[0];
    if (!parse_number(fields[1], a.width) || !parse_number(fields[2], a.height) || a.width == 0 || a.height == 0) {
      throw AnnotationError(where + "invalid image extents '" + fields[1] + "' x '" + fields[2] + "'");
    }
    if (require_images && !std::filesystem::exists(a.image_path)) {
      throw AnnotationError(where + "missing image file " + a.image_path.string());
    }
    if (!fields[3].empty()) {
      for (const auto& item : split(fields[3], ';')) {
        if (item.empty()) continue;
        const auto xy = split(item, ',');
        Point p;
        if (xy.size() != 2 || !parse_number(xy[0], p.x) || !parse_number(xy[1], p.y)) {
          throw AnnotationError(where + "malformed point '" + item + "'");
        }
        if (!(p.x >= 0 && p.x < static_cast<double>(a.width) && p.y >= 0 && p.y < static_cast<double>(a.height))) {
          throw AnnotationError(where + "point (" + item + ") outside the image bounds [0," + std::to_string(a.width) +
                                ")x[0," + std::to_string(a.height) + ")");
        }
        a.points.push_back(p);
      }
    }
    out.push_back(std::move(a));
  }
  return out;
}

void save_annotations(const std::filesystem::path& path, const std::vector<Annotation>& annotations) {
  std::ofstream out(path);
  if (!out) throw AnnotationError("cannot write annotation file " + path.string());
  const auto base = path.parent_path();
  for (const auto& a : annotations) {
    auto rel = a.image_path.empty() ? std::filesystem::path(a.image_id) : a.image_path.lexically_relative(base);
    if (rel.empty()) rel = a.image_path;
    out << rel.generic_string() << '\t' << a.width << '\t' << a.height << '\t';
    for (std::size_t i = 0; i < a.points.size(); ++i) {
      if (i) out << ';';
      out << format_coord(a.points[i].x) << ',' << format_coord(a.points[i].y);
    }
    out << '\n';
  }
  if (!out) throw AnnotationError("cannot write annotation file " + path.string());
}

std::size_t count_in_box(const std::vector<Point>& points, double x0, double y0, double w, double h) {
  return static_cast<std::size_t>(std::count_if(points.begin(), points.end(), [&](const Point& p) {
    return p.x >= x0 && p.x < x0 + w && p.y >= y0 && p.y < y0 + h;
  }));
}

std::vector<PatchSample> tile_image(const Image& image, const Annotation& annotation, std::size_t patch) {
  if (image.width == 0 || image.height == 0) throw ImageError("cannot tile an empty image");
  const std::size_t cols = (image.width + patch - 1) / patch;
  const std::size_t rows = (image.height + patch - 1) / patch;
  std::vector<PatchSample> out;
  out.reserve(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      PatchSample s;
      s.size = patch;
      s.origin_x = c * patch;
      s.origin_y = r * patch;
      s.pixels = crop(image, s.origin_x, s.origin_y, patch);
      s.count = count_in_box(annotation.points, static_cast<double>(s.origin_x), static_cast<double>(s.origin_y),
                             static_cast<double>(patch), static_cast<double>(patch));
      s.source_id = annotation.image_id;
      out.push_back(std::move(s));
    }
  }
  return out;
}

PatchTriplet make_priors(const PatchSample& sample) {
  const std::size_t p = sample.size;
  if (p < 2 || p % 2 != 0 || sample.pixels.size() != 3 * p * p) {
    throw std::invalid_argument("patch pixels do not match an even square extent");
  }
  PatchTriplet t;
  t.size = p;
  t.i2 = sample.pixels;
  t.i1 = bilinear_resize(sample.pixels, 3, p, p, 2 * p, 2 * p);
  t.i3 = bilinear_resize(sample.pixels, 3, p, p, p / 2, p / 2);
  t.count = sample.count;
  return t;
}

std::vector<float> flip_planar(const std::vector<float>& pixels, std::size_t channels, std::size_t height,
                               std::size_t width) {
  std::vector<float> out(pixels.size());
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t y = 0; y < height; ++y) {
      const float* src = &pixels[(c * height + y) * width];
      std::reverse_copy(src, src + width, &out[(c * height + y) * width]);
    }
  return out;
}

PatchSample horizontal_flip(const PatchSample& sample) {
  PatchSample out = sample;
  out.pixels = flip_planar(sample.pixels, 3, sample.size, sample.size);
  return out;
}

Dataset load_dataset(const std::filesystem::path& annotation_path) {
  Dataset d;
  d.annotations = load_annotations(annotation_path);
  d.images.reserve(d.annotations.size());
  for (const auto& a : d.annotations) {
    Image img = read_image(a.image_path);
    if (img.width != a.width || img.height != a.height) {
      throw AnnotationError(a.image_path.string() + ": decoded extents " + std::to_string(img.width) + "x" +
                            std::to_string(img.height) + " differ from the annotated " + std::to_string(a.width) +
                            "x" + std::to_string(a.height));
    }
    d.images.push_back(std::move(img));
  }
  return d;
}

std::vector<std::size_t> crop_sizes(std::size_t patch) { return {2 * patch, patch, patch / 2}; }

std::vector<CropSpec> sample_crop_specs(const Dataset& dataset, std::size_t n, std::uint64_t seed,
                                        std::size_t patch, bool augment) {
  if (dataset.size() == 0) throw std::invalid_argument("cannot sample patches from an empty dataset");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_image(0, dataset.size() - 1);
  const auto sizes = crop_sizes(patch);
  std::vector<CropSpec> out;
  out.reserve(augment ? 2 * n : n);
  for (std::size_t k = 0; k < n; ++k) {
    CropSpec c;
    c.image = pick_image(rng);
    const Annotation& ann = dataset.annotations[c.image];
    std::vector<std::size_t> fitting;
    for (auto s : sizes)
      if (s <= ann.width && s <= ann.height) fitting.push_back(s);
    // Images smaller than every crop fall back to the smallest, zero padded.
    if (fitting.empty()) fitting.push_back(sizes.back());
    c.size = fitting[std::uniform_int_distribution<std::size_t>(0, fitting.size() - 1)(rng)];
    const std::size_t max_x = ann.width > c.size ? ann.width - c.size : 0;
    const std::size_t max_y = ann.height > c.size ? ann.height - c.size : 0;
    c.origin_x = std::uniform_int_distribution<std::size_t>(0, max_x)(rng);
    c.origin_y = std::uniform_int_distribution<std::size_t>(0, max_y)(rng);
    c.count = count_in_box(ann.points, static_cast<double>(c.origin_x), static_cast<double>(c.origin_y),
                           static_cast<double>(c.size), static_cast<double>(c.size));
    out.push_back(c);
  }
  if (augment) {
    for (std::size_t k = 0; k < n; ++k) {
      CropSpec c = out[k];
      c.flip = true;
      out.push_back(c);
    }
  }
  return out;
}

PatchSample realize_crop(const Dataset& dataset, const CropSpec& spec, std::size_t patch) {
  const Image& img = dataset.images.at(spec.image);
  PatchSample p;
  p.size = patch;
  p.origin_x = spec.origin_x;
  p.origin_y = spec.origin_y;
  p.count = spec.count;
  p.source_id = dataset.annotations[spec.image].image_id;
  auto pixels = crop(img, spec.origin_x, spec.origin_y, spec.size);
  p.pixels = spec.size == patch ? std::move(pixels) : bilinear_resize(pixels, 3, spec.size, spec.size, patch, patch);
  return spec.flip ? horizontal_flip(p) : p;
}

std::vector<PatchSample> sample_training_patches(const Dataset& dataset, std::size_t n, std::uint64_t seed,
                                                 std::size_t patch, bool augment) {
  std::vector<PatchSample> out;
  for (const auto& spec : sample_crop_specs(dataset, n, seed, patch, augment)) {
    out.push_back(realize_crop(dataset, spec, patch));
  }
  return out;
}

Dataset synth_generate(const SynthOptions& o) {
  if (o.count_min > o.count_max) throw std::invalid_argument("synthetic count range is empty");
  if (o.width == 0 || o.height == 0) throw std::invalid_argument("synthetic image extents must be positive");
  if (!(o.blob_radius > 0)) throw std::invalid_argument("blob radius must be positive");
  std::mt19937_64 rng(o.seed);
  std::uniform_int_distribution<std::size_t> count_dist(o.count_min, o.count_max);
  std::uniform_real_distribution<double> xd(0.0, static_cast<double>(o.width));
  std::uniform_real_distribution<double> yd(0.0, static_cast<double>(o.height));
  std::uniform_real_distribution<double> tint(0.8, 1.0);
  constexpr float kBackground = 0.05f;
  const double sigma = o.blob_radius;
  const auto reach = static_cast<long>(std::ceil(4 * sigma));

  Dataset d;
  for (std::size_t i = 0; i < o.images; ++i) {
    Annotation a;
    std::ostringstream id;
    id << "images/" << std::setw(5) << std::setfill('0') << i << ".png";
    a.image_id = id.str();
    a.width = o.width;
    a.height = o.height;
    Image img(o.width, o.height, kBackground);
    const std::size_t count = count_dist(rng);
    for (std::size_t k = 0; k < count; ++k) {
      Point p{xd(rng), yd(rng)};
      // Guard against the open upper bound rounding up.
      p.x = std::min(p.x, std::nextafter(static_cast<double>(o.width), 0.0));
      p.y = std::min(p.y, std::nextafter(static_cast<double>(o.height), 0.0));
      const double rgb[3] = {tint(rng), tint(rng), tint(rng)};
      a.points.push_back(p);
      const long cx = static_cast<long>(p.x), cy = static_cast<long>(p.y);
      for (long y = std::max(0L, cy - reach); y <= std::min<long>(o.height - 1, cy + reach); ++y) {
        for (long x = std::max(0L, cx - reach); x <= std::min<long>(o.width - 1, cx + reach); ++x) {
          const double dx = x + 0.5 - p.x, dy = y + 0.5 - p.y;
          const double g = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
          for (std::size_t c = 0; c < 3; ++c) {
            float& v = img.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
            v = std::min(1.f, v + static_cast<float>(rgb[c] * g));
          }
        }
      }
    }
    d.annotations.push_back(std::move(a));
    d.images.push_back(std::move(img));
  }
  return d;
}

std::filesystem::path write_dataset(const std::filesystem::path& dir, Dataset& dataset) {
  std::filesystem::create_directories(dir / "images");
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    auto& a = dataset.annotations[i];
    a.image_path = dir / a.image_id;
    write_image(a.image_path, dataset.images[i]);
  }
  const auto path = dir / "annotations.txt";
  save_annotations(path, dataset.annotations);
  return path;
}

template <typename T>
PriorBatch<T> make_batch(const std::vector<const PatchTriplet*>& triplets) {
  if (triplets.empty()) throw std::invalid_argument("empty batch");
  const std::size_t n = triplets.size(), p = triplets.front()->size;
  std::vector<T> i1, i2, i3;
  i1.reserve(n * 12 * p * p);
  i2.reserve(n * 3 * p * p);
  i3.reserve(n * 3 * p * p / 4);
  for (const auto* t : triplets) {
    if (t->size != p) throw ShapeError("batch mixes patch extents");
    i1.insert(i1.end(), t->i1.begin(), t->i1.end());
    i2.insert(i2.end(), t->i2.begin(), t->i2.end());
    i3.insert(i3.end(), t->i3.begin(), t->i3.end());
  }
  return {Tensor<T>(Shape{n, 3, 2 * p, 2 * p}, std::move(i1)), Tensor<T>(Shape{n, 3, p, p}, std::move(i2)),
          Tensor<T>(Shape{n, 3, p / 2, p / 2}, std::move(i3))};
}

template PriorBatch<float> make_batch<float>(const std::vector<const PatchTriplet*>&);
template PriorBatch<double> make_batch<double>(const std::vector<const PatchTriplet*>&);

}  // namespace mrf
