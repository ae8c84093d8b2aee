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

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "mrf/network.hpp"

namespace mrf {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Precision { kFloat32, kFloat64 };

/// Everything a command needs: the model plus data, optimisation and output settings.
struct RunConfig {
  ModelConfig model;

  std::string train_annotations;
  std::string val_annotations;  // empty: hold out val_fraction of the training images
  std::string test_annotations;
  double val_fraction = 0.1;
  std::size_t samples = 60000;  // random crops drawn before flip doubling
  bool augment_flip = true;

  std::uint64_t seed = 0;
  std::size_t batch_size = 32;
  std::size_t epochs = 100;
  double lr = 0.001;
  std::size_t lr_halving_epochs = 25;
  double momentum = 0.9;
  double weight_decay = 0.0001;

  std::string out_dir = "runs/default";
  Precision precision = Precision::kFloat32;

  /// Throws ConfigError naming the first invalid field.
  void validate() const;

  bool operator==(const RunConfig&) const = default;
};

/// Parses `key = value` lines; `#` starts a comment. Unknown keys, duplicate
/// keys and malformed values are errors that name the line.
RunConfig parse_run_config(const std::string& text, const std::string& source = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);

/// Canonical text form; parse_run_config(format_run_config(c)) == c.
std::string format_run_config(const RunConfig& config);

/// Model-only subset of the same format (used in checkpoint headers).
std::string format_model_config(const ModelConfig& config);
ModelConfig parse_model_config(const std::string& text, const std::string& source = "<model>");

std::string format_double(double v);

}  // namespace mrf
