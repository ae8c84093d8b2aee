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

#include "mrf/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

namespace mrf {
namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

struct ConvGeometry {
  std::size_t batch, in_channels, height, width;
  std::size_t out_channels, kernel_h, kernel_w;
  std::size_t stride, padding;
  std::size_t out_h, out_w;

  std::size_t patch() const { return in_channels * kernel_h * kernel_w; }
  std::size_t pixels() const { return out_h * out_w; }
  bool pointwise() const { return kernel_h == 1 && kernel_w == 1 && stride == 1 && padding == 0; }
};

template <typename T>
void im2col(const T* image, const ConvGeometry& g, T* col) {
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    const T* plane = image + c * g.height * g.width;
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
        T* row = col + ((c * g.kernel_h + ky) * g.kernel_w + kx) * g.pixels();
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto y = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
          T* dst = row + oy * g.out_w;
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill_n(dst, g.out_w, T{0});
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(y) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto x = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
            dst[ox] = (x < 0 || x >= static_cast<std::ptrdiff_t>(g.width)) ? T{0} : src[x];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* image) {
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    T* plane = image + c * g.height * g.width;
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
        const T* row = col + ((c * g.kernel_h + ky) * g.kernel_w + kx) * g.pixels();
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto y = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.height)) continue;
          T* dst = plane + static_cast<std::size_t>(y) * g.width;
          const T* src = row + oy * g.out_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto x = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
            if (x >= 0 && x < static_cast<std::ptrdiff_t>(g.width)) dst[x] += src[ox];
          }
        }
      }
    }
  }
}

void require_nchw(const Shape& s, const char* op) {
  if (s.size() != 4) throw ShapeError(std::string(op) + " expects NCHW input, got " + to_string(s));
}

}  // namespace

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                               std::size_t padding) {
  if (stride == 0) throw std::invalid_argument("convolution stride must be positive");
  if (in + 2 * padding < kernel) {
    throw ShapeError("convolution kernel " + std::to_string(kernel) + " exceeds padded extent " +
                     std::to_string(in + 2 * padding));
  }
  return (in + 2 * padding - kernel) / stride + 1;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride, std::size_t padding) {
  require_nchw(input.shape(), "conv2d");
  if (weight.dim() != 4) throw ShapeError("conv2d weight must be 4-D, got " + to_string(weight.shape()));
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  if (ws[1] != is[1]) {
    throw ShapeError("conv2d channel mismatch: input " + to_string(is) + " vs kernel " + to_string(ws));
  }
  if (bias.defined() && (bias.numel() != ws[0])) {
    throw ShapeError("conv2d bias " + to_string(bias.shape()) + " does not match kernel " + to_string(ws));
  }
  ConvGeometry g{is[0], is[1], is[2], is[3], ws[0], ws[2], ws[3], stride, padding, 0, 0};
  g.out_h = conv_output_extent(g.height, g.kernel_h, stride, padding);
  g.out_w = conv_output_extent(g.width, g.kernel_w, stride, padding);

  const std::size_t in_size = g.in_channels * g.height * g.width;
  const std::size_t out_size = g.out_channels * g.pixels();
  std::vector<T> out(g.batch * out_size);
  std::vector<T> col(g.pointwise() ? 0 : g.patch() * g.pixels());
  auto x = input.values();
  ConstMatrixMap<T> w(weight.values().data(), static_cast<Eigen::Index>(g.out_channels),
                      static_cast<Eigen::Index>(g.patch()));
  for (std::size_t n = 0; n < g.batch; ++n) {
    const T* src = x.data() + n * in_size;
    if (!g.pointwise()) {
      im2col(src, g, col.data());
      src = col.data();
    }
    ConstMatrixMap<T> cm(src, static_cast<Eigen::Index>(g.patch()), static_cast<Eigen::Index>(g.pixels()));
    MatrixMap<T> om(out.data() + n * out_size, static_cast<Eigen::Index>(g.out_channels),
                    static_cast<Eigen::Index>(g.pixels()));
    om.noalias() = w * cm;
    if (bias.defined()) {
      auto b = bias.values();
      for (std::size_t c = 0; c < g.out_channels; ++c) om.row(static_cast<Eigen::Index>(c)).array() += b[c];
    }
  }

  Shape out_shape{g.batch, g.out_channels, g.out_h, g.out_w};
  return detail::record<T>(out_shape, std::move(out), "conv2d", {input, weight, bias},
                           [g, in_size, out_size](detail::Node<T>& self) {
    const auto& x = self.inputs[0]->value;
    const auto& wv = self.inputs[1]->value;
    auto* dx_node = detail::grad_input(self, 0);
    auto* dw_node = detail::grad_input(self, 1);
    auto* db_node = self.inputs[2] ? detail::grad_input(self, 2) : nullptr;
    const auto rows = static_cast<Eigen::Index>(g.out_channels);
    const auto k = static_cast<Eigen::Index>(g.patch());
    const auto p = static_cast<Eigen::Index>(g.pixels());
    ConstMatrixMap<T> w(wv.data(), rows, k);
    std::vector<T> col(g.pointwise() ? 0 : g.patch() * g.pixels());
    std::vector<T> dcol(dx_node && !g.pointwise() ? g.patch() * g.pixels() : 0);
    for (std::size_t n = 0; n < g.batch; ++n) {
      ConstMatrixMap<T> gout(self.grad.data() + n * out_size, rows, p);
      if (dw_node) {
        const T* src = x.data() + n * in_size;
        if (!g.pointwise()) {
          im2col(src, g, col.data());
          src = col.data();
        }
        ConstMatrixMap<T> cm(src, k, p);
        MatrixMap<T> dw(dw_node->grad_buffer().data(), rows, k);
        dw.noalias() += gout * cm.transpose();
      }
      if (db_node) {
        auto& db = db_node->grad_buffer();
        for (Eigen::Index c = 0; c < rows; ++c) db[static_cast<std::size_t>(c)] += gout.row(c).sum();
      }
      if (dx_node) {
        T* dx = dx_node->grad_buffer().data() + n * in_size;
        if (g.pointwise()) {
          MatrixMap<T> dxm(dx, k, p);
          dxm.noalias() += w.transpose() * gout;
        } else {
          MatrixMap<T> dcm(dcol.data(), k, p);
          dcm.noalias() = w.transpose() * gout;
          col2im_add(dcol.data(), g, dx);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, bool training, T momentum,
                     T eps) {
  require_nchw(input.shape(), "batch_norm");
  const Shape& s = input.shape();
  const std::size_t batch = s[0], channels = s[1], plane = s[2] * s[3];
  for (const Tensor<T>* t : std::initializer_list<const Tensor<T>*>{&gamma, &beta, &running_mean, &running_var}) {
    if (t->numel() != channels) {
      throw ShapeError("batch_norm parameter " + to_string(t->shape()) + " does not match input " +
                       to_string(s));
    }
  }
  const std::size_t count = batch * plane;
  if (training && count < 2) {
    throw std::invalid_argument("batch_norm in training mode needs at least 2 values per channel, got input " +
                                to_string(s));
  }
  auto x = input.values();
  auto gm = gamma.values();
  auto bt = beta.values();
  std::vector<T> mean(channels), inv_std(channels);
  if (training) {
    auto rm = running_mean.data();
    auto rv = running_var.data();
    for (std::size_t c = 0; c < channels; ++c) {
      T sum{0};
      for (std::size_t n = 0; n < batch; ++n) {
        const T* p = x.data() + (n * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) sum += p[i];
      }
      const T mu = sum / static_cast<T>(count);
      T sq{0};
      for (std::size_t n = 0; n < batch; ++n) {
        const T* p = x.data() + (n * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - mu) * (p[i] - mu);
      }
      const T var = sq / static_cast<T>(count);
      mean[c] = mu;
      inv_std[c] = T{1} / std::sqrt(var + eps);
      rm[c] = (T{1} - momentum) * rm[c] + momentum * mu;
      rv[c] = (T{1} - momentum) * rv[c] + momentum * sq / static_cast<T>(count - 1);
    }
  } else {
    auto rm = running_mean.values();
    auto rv = running_var.values();
    for (std::size_t c = 0; c < channels; ++c) {
      mean[c] = rm[c];
      inv_std[c] = T{1} / std::sqrt(rv[c] + eps);
    }
  }

  std::vector<T> out(x.size());
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (n * channels + c) * plane;
      const T a = gm[c] * inv_std[c];
      const T b = bt[c] - a * mean[c];
      for (std::size_t i = 0; i < plane; ++i) out[base + i] = a * x[base + i] + b;
    }
  }
  return detail::record<T>(s, std::move(out), "batch_norm", {input, gamma, beta},
                           [training, batch, channels, plane, count, mean = std::move(mean),
                            inv_std = std::move(inv_std)](detail::Node<T>& self) {
    const auto& xv = self.inputs[0]->value;
    const auto& gv = self.inputs[1]->value;
    const auto& dy = self.grad;
    auto* dx_node = detail::grad_input(self, 0);
    auto* dg_node = detail::grad_input(self, 1);
    auto* db_node = detail::grad_input(self, 2);
    for (std::size_t c = 0; c < channels; ++c) {
      T sum_dy{0}, sum_dy_xhat{0};
      for (std::size_t n = 0; n < batch; ++n) {
        const std::size_t base = (n * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const T xhat = (xv[base + i] - mean[c]) * inv_std[c];
          sum_dy += dy[base + i];
          sum_dy_xhat += dy[base + i] * xhat;
        }
      }
      if (dg_node) dg_node->grad_buffer()[c] += sum_dy_xhat;
      if (db_node) db_node->grad_buffer()[c] += sum_dy;
      if (!dx_node) continue;
      auto& dx = dx_node->grad_buffer();
      const T scale_c = gv[c] * inv_std[c];
      const T m = static_cast<T>(count);
      for (std::size_t n = 0; n < batch; ++n) {
        const std::size_t base = (n * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          if (training) {
            const T xhat = (xv[base + i] - mean[c]) * inv_std[c];
            dx[base + i] += scale_c * (dy[base + i] - sum_dy / m - xhat * sum_dy_xhat / m);
          } else {
            dx[base + i] += scale_c * dy[base + i];
          }
        }
      }
    }
  });
}

template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& input) {
  require_nchw(input.shape(), "avg_pool2");
  const Shape& s = input.shape();
  if (s[2] % 2 != 0 || s[3] % 2 != 0) {
    throw ShapeError("avg_pool2 needs even spatial extents, got " + to_string(s));
  }
  const std::size_t planes = s[0] * s[1], h = s[2], w = s[3], oh = h / 2, ow = w / 2;
  auto x = input.values();
  std::vector<T> out(planes * oh * ow);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = x.data() + p * h * w;
    T* dst = out.data() + p * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const T* a = src + 2 * y * w + 2 * xx;
        dst[y * ow + xx] = (a[0] + a[1] + a[w] + a[w + 1]) * T(0.25);
      }
    }
  }
  return detail::record<T>(Shape{s[0], s[1], oh, ow}, std::move(out), "avg_pool2", {input},
                           [planes, h, w, oh, ow](detail::Node<T>& self) {
    auto* in = detail::grad_input(self, 0);
    if (!in) return;
    auto& dx = in->grad_buffer();
    for (std::size_t p = 0; p < planes; ++p) {
      const T* g = self.grad.data() + p * oh * ow;
      T* d = dx.data() + p * h * w;
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t xx = 0; xx < ow; ++xx) {
          const T v = g[y * ow + xx] * T(0.25);
          T* a = d + 2 * y * w + 2 * xx;
          a[0] += v;
          a[1] += v;
          a[w] += v;
          a[w + 1] += v;
        }
      }
    }
  });
}

LinearTaps linear_taps(std::size_t in_extent, std::size_t out_extent) {
  LinearTaps taps;
  taps.lo.resize(out_extent);
  taps.hi.resize(out_extent);
  taps.frac.resize(out_extent);
  const double ratio = static_cast<double>(in_extent) / static_cast<double>(out_extent);
  for (std::size_t i = 0; i < out_extent; ++i) {
    double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    auto lo = static_cast<std::size_t>(src);
    if (lo > in_extent - 1) lo = in_extent - 1;
    taps.lo[i] = lo;
    taps.hi[i] = std::min(lo + 1, in_extent - 1);
    taps.frac[i] = taps.hi[i] == lo ? 0.0 : src - static_cast<double>(lo);
  }
  return taps;
}

template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& input, std::size_t factor) {
  require_nchw(input.shape(), "bilinear_upsample");
  if (factor == 0) throw std::invalid_argument("upsampling factor must be positive");
  if (factor == 1) return input;
  const Shape& s = input.shape();
  const std::size_t planes = s[0] * s[1], h = s[2], w = s[3], oh = h * factor, ow = w * factor;
  LinearTaps ty = linear_taps(h, oh);
  LinearTaps tx = linear_taps(w, ow);
  auto x = input.values();
  std::vector<T> out(planes * oh * ow);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = x.data() + p * h * w;
    T* dst = out.data() + p * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      const T fy = static_cast<T>(ty.frac[y]);
      const T* r0 = src + ty.lo[y] * w;
      const T* r1 = src + ty.hi[y] * w;
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const T fx = static_cast<T>(tx.frac[xx]);
        const T top = (T{1} - fx) * r0[tx.lo[xx]] + fx * r0[tx.hi[xx]];
        const T bottom = (T{1} - fx) * r1[tx.lo[xx]] + fx * r1[tx.hi[xx]];
        dst[y * ow + xx] = (T{1} - fy) * top + fy * bottom;
      }
    }
  }
  return detail::record<T>(Shape{s[0], s[1], oh, ow}, std::move(out), "bilinear_upsample", {input},
                           [planes, h, w, oh, ow, ty = std::move(ty), tx = std::move(tx)](detail::Node<T>& self) {
    auto* in = detail::grad_input(self, 0);
    if (!in) return;
    auto& dx = in->grad_buffer();
    for (std::size_t p = 0; p < planes; ++p) {
      const T* g = self.grad.data() + p * oh * ow;
      T* d = dx.data() + p * h * w;
      for (std::size_t y = 0; y < oh; ++y) {
        const T fy = static_cast<T>(ty.frac[y]);
        T* r0 = d + ty.lo[y] * w;
        T* r1 = d + ty.hi[y] * w;
        for (std::size_t xx = 0; xx < ow; ++xx) {
          const T fx = static_cast<T>(tx.frac[xx]);
          const T v = g[y * ow + xx];
          r0[tx.lo[xx]] += (T{1} - fy) * (T{1} - fx) * v;
          r0[tx.hi[xx]] += (T{1} - fy) * fx * v;
          r1[tx.lo[xx]] += fy * (T{1} - fx) * v;
          r1[tx.hi[xx]] += fy * fx * v;
        }
      }
    }
  });
}

std::vector<float> bilinear_resize(const std::vector<float>& src, std::size_t channels,
                                   std::size_t height, std::size_t width, std::size_t out_height,
                                   std::size_t out_width) {
  if (src.size() != channels * height * width) {
    throw ShapeError("bilinear_resize: buffer of " + std::to_string(src.size()) + " values does not match " +
                     to_string(Shape{channels, height, width}));
  }
  const LinearTaps ty = linear_taps(height, out_height);
  const LinearTaps tx = linear_taps(width, out_width);
  std::vector<float> out(channels * out_height * out_width);
  for (std::size_t c = 0; c < channels; ++c) {
    const float* plane = src.data() + c * height * width;
    float* dst = out.data() + c * out_height * out_width;
    for (std::size_t y = 0; y < out_height; ++y) {
      const double fy = ty.frac[y];
      const float* r0 = plane + ty.lo[y] * width;
      const float* r1 = plane + ty.hi[y] * width;
      for (std::size_t x = 0; x < out_width; ++x) {
        const double fx = tx.frac[x];
        const double top = (1.0 - fx) * r0[tx.lo[x]] + fx * r0[tx.hi[x]];
        const double bottom = (1.0 - fx) * r1[tx.lo[x]] + fx * r1[tx.hi[x]];
        dst[y * out_width + x] = static_cast<float>((1.0 - fy) * top + fy * bottom);
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> fully_connected(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (input.dim() < 2) throw ShapeError("fully_connected expects (N, ...) input, got " + to_string(input.shape()));
  if (weight.dim() != 2) throw ShapeError("fully_connected weight must be 2-D, got " + to_string(weight.shape()));
  const std::size_t batch = input.size(0);
  const std::size_t in_features = input.numel() / batch;
  const std::size_t out_features = weight.size(0);
  if (weight.size(1) != in_features) {
    throw ShapeError("fully_connected length mismatch: input " + to_string(input.shape()) + " has " +
                     std::to_string(in_features) + " features, weight is " + to_string(weight.shape()));
  }
  if (bias.defined() && bias.numel() != out_features) {
    throw ShapeError("fully_connected bias " + to_string(bias.shape()) + " does not match weight " +
                     to_string(weight.shape()));
  }
  const auto nb = static_cast<Eigen::Index>(batch);
  const auto ni = static_cast<Eigen::Index>(in_features);
  const auto no = static_cast<Eigen::Index>(out_features);
  std::vector<T> out(batch * out_features);
  ConstMatrixMap<T> x(input.values().data(), nb, ni);
  ConstMatrixMap<T> w(weight.values().data(), no, ni);
  MatrixMap<T> y(out.data(), nb, no);
  y.noalias() = x * w.transpose();
  if (bias.defined()) {
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias.values().data(), no);
    y.rowwise() += b;
  }
  return detail::record<T>(Shape{batch, out_features}, std::move(out), "fully_connected",
                           {input, weight, bias}, [nb, ni, no](detail::Node<T>& self) {
    ConstMatrixMap<T> gy(self.grad.data(), nb, no);
    if (auto* in = detail::grad_input(self, 0)) {
      ConstMatrixMap<T> w(self.inputs[1]->value.data(), no, ni);
      MatrixMap<T> dx(in->grad_buffer().data(), nb, ni);
      dx.noalias() += gy * w;
    }
    if (auto* wn = detail::grad_input(self, 1)) {
      ConstMatrixMap<T> x(self.inputs[0]->value.data(), nb, ni);
      MatrixMap<T> dw(wn->grad_buffer().data(), no, ni);
      dw.noalias() += gy.transpose() * x;
    }
    if (self.inputs[2]) {
      if (auto* bn = detail::grad_input(self, 2)) {
        auto& db = bn->grad_buffer();
        for (Eigen::Index o = 0; o < no; ++o) db[static_cast<std::size_t>(o)] += gy.col(o).sum();
      }
    }
  });
}

void set_num_threads(int threads) { Eigen::setNbThreads(threads > 0 ? threads : 1); }

#define MRF_INSTANTIATE(T)                                                                          \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t,  \
                               std::size_t);                                                        \
  template Tensor<T> batch_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>&, \
                                   Tensor<T>&, bool, T, T);                                         \
  template Tensor<T> avg_pool2<T>(const Tensor<T>&);                                                \
  template Tensor<T> bilinear_upsample<T>(const Tensor<T>&, std::size_t);                           \
  template Tensor<T> fully_connected<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);

MRF_INSTANTIATE(float)
MRF_INSTANTIATE(double)

#undef MRF_INSTANTIATE

}  // namespace mrf
