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

#include "mrf/network.hpp"

#include <cmath>
#include <stdexcept>

namespace mrf {

std::string to_string(HeadVersion version) {
  return "v" + std::to_string(static_cast<int>(version));
}

HeadVersion parse_head_version(const std::string& text) {
  if (text == "v1") return HeadVersion::kV1;
  if (text == "v2") return HeadVersion::kV2;
  if (text == "v3") return HeadVersion::kV3;
  if (text == "v4") return HeadVersion::kV4;
  if (text == "v5") return HeadVersion::kV5;
  throw std::invalid_argument("unknown head version '" + text + "' (expected v1..v5)");
}

void ModelConfig::validate() const {
  if (base_width < 4 || base_width % 4 != 0) {
    throw std::invalid_argument("base_width must be a positive multiple of 4, got " + std::to_string(base_width));
  }
  for (std::size_t i = 0; i < rm_per_phase.size(); ++i) {
    if (rm_per_phase[i] < 1) {
      throw std::invalid_argument("rm_per_phase[" + std::to_string(i) + "] must be at least 1");
    }
  }
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("combination weights must be finite and non-negative");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw std::invalid_argument("combination weights must sum to 1, got " + std::to_string(sum));
  }
  if (patch_size < 32 || patch_size % 16 != 0) {
    throw std::invalid_argument("patch_size must be a multiple of 16 and at least 32, got " +
                                std::to_string(patch_size));
  }
  const int version = static_cast<int>(head_version);
  if (version < 1 || version > 5) throw std::invalid_argument("head_version out of range");
}

std::array<ColumnSpec, 3> column_specs(const ModelConfig& config) {
  std::array<ColumnSpec, 3> specs{};
  specs[0] = {1, config.base_width, config.patch_size / 2};
  for (std::size_t i = 1; i < 3; ++i) {
    specs[i] = {static_cast<int>(i + 1), 2 * specs[i - 1].channels, specs[i - 1].resolution / 2};
  }
  return specs;
}

double combine_counts(const HeadOutputs& h, const std::array<double, 4>& w) {
  return w[0] * h.cc_p1 + w[1] * h.cc_p2 + w[2] * h.cc_p3 + w[3] * h.cc_final;
}

std::array<double, 4> counting_weights(const ModelConfig& config) {
  if (config.use_auxiliary_heads) return config.weights;
  return {0.0, 0.0, 0.0, 1.0};
}

namespace {

template <typename T>
void trace_shape(ShapeTrace* trace, const std::string& name, const Tensor<T>& t) {
  if (trace) trace->emplace_back(name, t.shape());
}

template <typename T>
void require_feature_shape(const Tensor<T>& t, std::size_t channels, std::size_t resolution,
                           const std::string& stage) {
  const Shape& s = t.shape();
  if (s.size() != 4 || s[1] != channels || s[2] != resolution || s[3] != resolution) {
    throw ShapeError(stage + ": expected (N," + std::to_string(channels) + "," + std::to_string(resolution) +
                     "," + std::to_string(resolution) + "), got " + to_string(s));
  }
}

}  // namespace

template <typename T>
Stem<T>::Stem(int id_, const ModelConfig& config, Rng& rng) : id(id_) {
  const auto specs = column_specs(config);
  const std::size_t sw = config.stem_width();
  switch (id) {
    case 1:
      layers.emplace_back(3, sw, 3, 2, rng);
      if (config.use_prior_i1) layers.emplace_back(sw, sw, 3, 2, rng);
      layers.emplace_back(sw, config.stem1_width(), 1, 1, rng);
      break;
    case 2:
      layers.emplace_back(3, sw, 3, 2, rng);
      layers.emplace_back(sw, specs[1].channels, 3, 2, rng);
      break;
    case 3:
      layers.emplace_back(3, sw, 3, 2, rng);
      layers.emplace_back(sw, specs[2].channels, 3, 2, rng);
      break;
    default:
      throw std::invalid_argument("stem id must be 1, 2 or 3");
  }
}

template <typename T>
Tensor<T> Stem<T>::forward(const Tensor<T>& prior, bool training) {
  if (prior.dim() != 4 || prior.size(1) != 3) {
    throw ShapeError("stem" + std::to_string(id) + ": expected (N,3,S,S) prior, got " + to_string(prior.shape()));
  }
  Tensor<T> y = prior;
  for (auto& layer : layers) y = layer.forward(y, training);
  return y;
}

template <typename T>
void Stem<T>::collect(const std::string& prefix, ParamList<T>& out) {
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(prefix + ".layer" + std::to_string(i), out);
}

template <typename T>
FusionTransform<T>::FusionTransform(const ColumnSpec& source_, const ColumnSpec& target_, Rng& rng)
    : source(source_), target(target_) {
  if (source.index < 1 || source.index > 3 || target.index < 1 || target.index > 3) {
    throw std::invalid_argument("fusion column indices must lie in {1,2,3}");
  }
  if (source.index < target.index) {
    const int n = target.index - source.index;
    for (int s = 0; s < n; ++s) {
      const std::size_t out = (s == n - 1) ? target.channels : source.channels;
      steps.emplace_back(source.channels, out, 3, 2, rng);
    }
  } else if (source.index > target.index) {
    upsample = std::size_t{1} << (source.index - target.index);
    steps.emplace_back(source.channels, target.channels, 1, 1, rng);
  }
}

template <typename T>
Tensor<T> FusionTransform<T>::forward(const Tensor<T>& input, bool training) {
  require_feature_shape(input, source.channels, source.resolution,
                        "fusion source column " + std::to_string(source.index));
  Tensor<T> y = input;
  if (upsample > 1) y = bilinear_upsample(y, upsample);
  for (auto& step : steps) y = step.forward(y, training);
  return y;
}

template <typename T>
void FusionTransform<T>::collect(const std::string& prefix, ParamList<T>& out) {
  for (std::size_t i = 0; i < steps.size(); ++i) steps[i].collect(prefix + ".step" + std::to_string(i), out);
}

template <typename T>
FusionStage<T>::FusionStage(const std::array<ColumnSpec, 3>& all, std::size_t columns, Rng& rng) {
  if (columns < 1 || columns > 3) throw std::invalid_argument("fusion stage needs 1 to 3 columns");
  specs.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(columns));
  transforms.resize(columns);
  for (std::size_t j = 0; j < columns; ++j) {
    for (std::size_t i = 0; i < columns; ++i) transforms[j].emplace_back(specs[i], specs[j], rng);
  }
}

template <typename T>
std::vector<Tensor<T>> FusionStage<T>::forward(const std::vector<Tensor<T>>& inputs, bool training) {
  if (inputs.size() != specs.size()) {
    throw ShapeError("fusion stage expects " + std::to_string(specs.size()) + " columns, got " +
                     std::to_string(inputs.size()));
  }
  std::vector<Tensor<T>> out;
  out.reserve(inputs.size());
  for (std::size_t j = 0; j < specs.size(); ++j) {
    Tensor<T> sum;
    for (std::size_t i = 0; i < specs.size(); ++i) {
      Tensor<T> term = transforms[j][i].forward(inputs[i], training);
      sum = sum.defined() ? add(sum, term) : term;
    }
    out.push_back(sum);
  }
  return out;
}

template <typename T>
void FusionStage<T>::collect(const std::string& prefix, ParamList<T>& out) {
  for (std::size_t j = 0; j < transforms.size(); ++j) {
    for (std::size_t i = 0; i < transforms[j].size(); ++i) {
      transforms[j][i].collect(prefix + ".to" + std::to_string(j + 1) + ".from" + std::to_string(i + 1), out);
    }
  }
}

template <typename T>
Tensor<T> RegressionHead<T>::forward(const Tensor<T>& input, bool training, ShapeTrace* trace,
                                     const std::string& name) {
  Tensor<T> y = input;
  for (std::size_t i = 0; i < convs.size(); ++i) {
    y = convs[i].forward(y, training);
    trace_shape(trace, name + ".conv" + std::to_string(i), y);
  }
  if (pool) {
    y = avg_pool2(y);
    trace_shape(trace, name + ".pool", y);
  }
  y = relu(hidden.forward(y));
  trace_shape(trace, name + ".hidden", y);
  y = output.forward(y);
  trace_shape(trace, name + ".output", y);
  return y;
}

template <typename T>
void RegressionHead<T>::collect(const std::string& prefix, ParamList<T>& out) {
  for (std::size_t i = 0; i < convs.size(); ++i) convs[i].collect(prefix + ".conv" + std::to_string(i), out);
  hidden.collect(prefix + ".hidden", out);
  output.collect(prefix + ".output", out);
}

namespace {

template <typename T>
void finish_head(RegressionHead<T>& head, const ModelConfig& config, Rng& rng) {
  const std::size_t side = config.patch_size / 16;
  head.hidden = Linear<T>(config.head_width() * side * side, config.fc_width(), rng);
  head.output = Linear<T>(config.fc_width(), 1, rng);
}

}  // namespace

template <typename T>
RegressionHead<T> make_auxiliary_head(int head_id, const ModelConfig& config, Rng& rng) {
  const auto specs = column_specs(config);
  const std::size_t h = config.head_width();
  RegressionHead<T> head;
  switch (head_id) {
    case 1:
      head.convs.emplace_back(specs[1].channels, h, 3, 2, rng);
      head.pool = true;
      break;
    case 2:
    case 3:
      head.convs.emplace_back(specs[2].channels, h, 3, 2, rng);
      head.pool = false;
      break;
    default:
      throw std::invalid_argument("auxiliary head id must be 1, 2 or 3");
  }
  finish_head(head, config, rng);
  return head;
}

template <typename T>
FinalHead<T>::FinalHead(const ModelConfig& config, Rng& rng) : version(config.head_version) {
  const auto specs = column_specs(config);
  const std::size_t h = config.head_width();
  auto& c = tail.convs;
  switch (version) {
    case HeadVersion::kV1:
      c.emplace_back(specs[0].channels, h, 3, 2, rng);
      c.emplace_back(h, h, 3, 2, rng);
      tail.pool = true;
      break;
    case HeadVersion::kV2:
      c.emplace_back(specs[1].channels, h, 1, 1, rng);
      c.emplace_back(h, h, 3, 2, rng);
      tail.pool = true;
      break;
    case HeadVersion::kV3:
      c.emplace_back(specs[2].channels, h, 1, 1, rng);
      tail.pool = true;
      break;
    case HeadVersion::kV4:
      c.emplace_back(specs[0].channels + specs[1].channels + specs[2].channels, h, 3, 1, rng);
      c.emplace_back(h, h, 3, 2, rng);
      c.emplace_back(h, h, 3, 2, rng);
      tail.pool = true;
      break;
    case HeadVersion::kV5:
      merge.emplace_back(specs[0].channels, specs[1].channels, 3, 2, rng);
      merge.emplace_back(specs[1].channels, specs[2].channels, 3, 2, rng);
      c.emplace_back(specs[2].channels, h, 3, 1, rng);
      c.emplace_back(h, h, 3, 2, rng);
      tail.pool = false;
      break;
  }
  finish_head(tail, config, rng);
}

template <typename T>
Tensor<T> FinalHead<T>::forward(const std::vector<Tensor<T>>& columns, bool training, ShapeTrace* trace) {
  if (columns.size() != 3) throw ShapeError("final head needs the three phase-3 columns");
  Tensor<T> x;
  switch (version) {
    case HeadVersion::kV1:
      x = columns[0];
      break;
    case HeadVersion::kV2:
      x = columns[1];
      break;
    case HeadVersion::kV3:
      x = columns[2];
      break;
    case HeadVersion::kV4: {
      const std::size_t r1 = columns[0].size(2);
      auto up2 = bilinear_upsample(columns[1], r1 / columns[1].size(2));
      auto up3 = bilinear_upsample(columns[2], r1 / columns[2].size(2));
      x = concat_channels<T>({columns[0], up2, up3});
      break;
    }
    case HeadVersion::kV5: {
      auto into2 = add(merge[0].forward(columns[0], training), columns[1]);
      trace_shape(trace, "final.merge2", into2);
      x = add(merge[1].forward(into2, training), columns[2]);
      trace_shape(trace, "final.merge3", x);
      break;
    }
  }
  trace_shape(trace, "final.input", x);
  return tail.forward(x, training, trace, "final");
}

template <typename T>
void FinalHead<T>::collect(const std::string& prefix, ParamList<T>& out) {
  for (std::size_t i = 0; i < merge.size(); ++i) merge[i].collect(prefix + ".merge" + std::to_string(i), out);
  tail.collect(prefix + ".tail", out);
}

template <typename T>
Network<T>::Network(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  specs_ = column_specs(config_);
  Rng rng(seed);
  stem1 = Stem<T>(1, config_, rng);
  stem2 = Stem<T>(2, config_, rng);
  if (config_.use_prior_i3) stem3 = Stem<T>(3, config_, rng);

  for (std::size_t r = 0; r < config_.rm_per_phase[0]; ++r) {
    phase1.emplace_back(UnitKind::kTwoLayer, config_.stem1_width(), config_.stem1_width(), rng);
  }
  phase1_reduce = ConvBnRelu<T>(config_.stem1_width(), specs_[0].channels, 1, 1, rng);
  transition2 = ConvBnRelu<T>(specs_[0].channels, specs_[1].channels, 3, 2, rng);
  for (std::size_t r = 0; r < config_.rm_per_phase[1]; ++r) {
    phase2.emplace_back();
    for (std::size_t c = 0; c < 2; ++c) {
      phase2.back().emplace_back(UnitKind::kThreeLayer, specs_[c].channels, specs_[c].channels, rng);
    }
    fuse2.emplace_back(specs_, 2, rng);
  }
  transition3 = ConvBnRelu<T>(specs_[1].channels, specs_[2].channels, 3, 2, rng);
  for (std::size_t r = 0; r < config_.rm_per_phase[2]; ++r) {
    phase3.emplace_back();
    for (std::size_t c = 0; c < 3; ++c) {
      phase3.back().emplace_back(UnitKind::kThreeLayer, specs_[c].channels, specs_[c].channels, rng);
    }
    fuse3.emplace_back(specs_, 3, rng);
  }
  if (config_.use_auxiliary_heads) {
    rh1 = make_auxiliary_head<T>(1, config_, rng);
    rh2 = make_auxiliary_head<T>(2, config_, rng);
    rh3 = make_auxiliary_head<T>(3, config_, rng);
  }
  final_head = FinalHead<T>(config_, rng);
}

template <typename T>
HeadTensors<T> Network<T>::forward(const PriorBatch<T>& batch, ShapeTrace* trace) {
  const std::size_t p = config_.patch_size;
  const bool tr = training_;
  require_feature_shape(batch.i2, 3, p, "input prior I2");
  const std::size_t n = batch.i2.size(0);
  trace_shape(trace, "I2", batch.i2);

  Tensor<T> ic1;
  if (config_.use_prior_i1) {
    require_feature_shape(batch.i1, 3, 2 * p, "input prior I1");
    if (batch.i1.size(0) != n) throw ShapeError("input prior I1: batch size differs from I2");
    trace_shape(trace, "I1", batch.i1);
    Tensor<T> y = batch.i1;
    for (std::size_t i = 0; i < stem1.layers.size(); ++i) {
      y = stem1.layers[i].forward(y, tr);
      trace_shape(trace, "stem1.layer" + std::to_string(i), y);
    }
    ic1 = y;
  } else {
    ic1 = stem1.forward(batch.i2, tr);
  }
  require_feature_shape(ic1, config_.stem1_width(), specs_[0].resolution, "stem1 output IC1");
  trace_shape(trace, "IC1", ic1);

  Tensor<T> ic2 = batch.i2;
  for (std::size_t i = 0; i < stem2.layers.size(); ++i) {
    ic2 = stem2.layers[i].forward(ic2, tr);
    trace_shape(trace, "stem2.layer" + std::to_string(i), ic2);
  }
  require_feature_shape(ic2, specs_[1].channels, specs_[1].resolution, "stem2 output IC2");
  trace_shape(trace, "IC2", ic2);

  Tensor<T> ic3;
  if (config_.use_prior_i3) {
    require_feature_shape(batch.i3, 3, p / 2, "input prior I3");
    if (batch.i3.size(0) != n) throw ShapeError("input prior I3: batch size differs from I2");
    trace_shape(trace, "I3", batch.i3);
    ic3 = batch.i3;
    for (std::size_t i = 0; i < stem3.layers.size(); ++i) {
      ic3 = stem3.layers[i].forward(ic3, tr);
      trace_shape(trace, "stem3.layer" + std::to_string(i), ic3);
    }
  } else {
    ic3 = Tensor<T>(Shape{n, specs_[2].channels, specs_[2].resolution, specs_[2].resolution});
  }
  require_feature_shape(ic3, specs_[2].channels, specs_[2].resolution, "stem3 output IC3");
  trace_shape(trace, "IC3", ic3);

  // Phase 1: column 1 alone at the stem-1 width.
  Tensor<T> x = ic1;
  for (std::size_t r = 0; r < phase1.size(); ++r) {
    x = phase1[r].forward(x, tr);
    trace_shape(trace, "phase1.rm" + std::to_string(r) + ".col1", x);
  }
  std::vector<Tensor<T>> cols{phase1_reduce.forward(x, tr)};
  trace_shape(trace, "phase1.out.col1", cols[0]);

  HeadTensors<T> heads;
  auto zero_count = [&] { return Tensor<T>(Shape{n, 1}); };

  cols.push_back(add(transition2.forward(cols[0], tr), ic2));
  require_feature_shape(cols[1], specs_[1].channels, specs_[1].resolution, "transition to column 2");
  trace_shape(trace, "transition2", cols[1]);
  heads.rh1 = rh1 ? rh1->forward(cols[1], tr, trace, "rh1") : zero_count();

  for (std::size_t r = 0; r < phase2.size(); ++r) {
    for (std::size_t c = 0; c < cols.size(); ++c) cols[c] = phase2[r][c].forward(cols[c], tr);
    cols = fuse2[r].forward(cols, tr);
    for (std::size_t c = 0; c < cols.size(); ++c) {
      trace_shape(trace, "phase2.rm" + std::to_string(r) + ".col" + std::to_string(c + 1), cols[c]);
    }
  }

  cols.push_back(add(transition3.forward(cols[1], tr), ic3));
  require_feature_shape(cols[2], specs_[2].channels, specs_[2].resolution, "transition to column 3");
  trace_shape(trace, "transition3", cols[2]);
  heads.rh2 = rh2 ? rh2->forward(cols[2], tr, trace, "rh2") : zero_count();

  for (std::size_t r = 0; r < phase3.size(); ++r) {
    for (std::size_t c = 0; c < cols.size(); ++c) cols[c] = phase3[r][c].forward(cols[c], tr);
    cols = fuse3[r].forward(cols, tr);
    for (std::size_t c = 0; c < cols.size(); ++c) {
      trace_shape(trace, "phase3.rm" + std::to_string(r) + ".col" + std::to_string(c + 1), cols[c]);
    }
  }
  for (std::size_t c = 0; c < 3; ++c) {
    require_feature_shape(cols[c], specs_[c].channels, specs_[c].resolution,
                          "phase-3 output column " + std::to_string(c + 1));
  }
  heads.rh3 = rh3 ? rh3->forward(cols[2], tr, trace, "rh3") : zero_count();
  heads.final = final_head.forward(cols, tr, trace);
  return heads;
}

template <typename T>
ParamList<T> Network<T>::parameters() {
  ParamList<T> out;
  stem1.collect("stem1", out);
  stem2.collect("stem2", out);
  stem3.collect("stem3", out);
  for (std::size_t r = 0; r < phase1.size(); ++r) phase1[r].collect("phase1.rm" + std::to_string(r), out);
  phase1_reduce.collect("phase1.reduce", out);
  transition2.collect("transition2", out);
  for (std::size_t r = 0; r < phase2.size(); ++r) {
    for (std::size_t c = 0; c < phase2[r].size(); ++c) {
      phase2[r][c].collect("phase2.rm" + std::to_string(r) + ".col" + std::to_string(c + 1), out);
    }
    fuse2[r].collect("phase2.fuse" + std::to_string(r), out);
  }
  transition3.collect("transition3", out);
  for (std::size_t r = 0; r < phase3.size(); ++r) {
    for (std::size_t c = 0; c < phase3[r].size(); ++c) {
      phase3[r][c].collect("phase3.rm" + std::to_string(r) + ".col" + std::to_string(c + 1), out);
    }
    fuse3[r].collect("phase3.fuse" + std::to_string(r), out);
  }
  if (rh1) rh1->collect("head.rh1", out);
  if (rh2) rh2->collect("head.rh2", out);
  if (rh3) rh3->collect("head.rh3", out);
  final_head.collect("head.final", out);
  return out;
}

template <typename T>
void Network<T>::zero_parameters() {
  for (auto& p : parameters()) {
    if (!p.trainable) continue;
    for (auto& v : p.tensor->data()) v = T{0};
  }
}

template <typename T>
void Network<T>::zero_grad() {
  for (auto& p : parameters()) p.tensor->zero_grad();
}

template <typename T>
std::vector<HeadOutputs> to_head_outputs(const HeadTensors<T>& heads) {
  const std::size_t n = heads.final.size(0);
  std::vector<HeadOutputs> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].cc_p1 = static_cast<double>(heads.rh1.at(i));
    out[i].cc_p2 = static_cast<double>(heads.rh2.at(i));
    out[i].cc_p3 = static_cast<double>(heads.rh3.at(i));
    out[i].cc_final = static_cast<double>(heads.final.at(i));
  }
  return out;
}

template class Stem<float>;
template class Stem<double>;
template class FusionTransform<float>;
template class FusionTransform<double>;
template class FusionStage<float>;
template class FusionStage<double>;
template class RegressionHead<float>;
template class RegressionHead<double>;
template class FinalHead<float>;
template class FinalHead<double>;
template class Network<float>;
template class Network<double>;
template RegressionHead<float> make_auxiliary_head<float>(int, const ModelConfig&, Rng&);
template RegressionHead<double> make_auxiliary_head<double>(int, const ModelConfig&, Rng&);
template std::vector<HeadOutputs> to_head_outputs<float>(const HeadTensors<float>&);
template std::vector<HeadOutputs> to_head_outputs<double>(const HeadTensors<double>&);

}  // namespace mrf
