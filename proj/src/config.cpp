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

#include "mrf/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <vector>

namespace mrf {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

template <typename V>
V parse_value(const std::string& text) {
  V v{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) throw ConfigError("invalid number '" + text + "'");
  return v;
}

bool parse_bool(const std::string& text) {
  if (text == "true") return true;
  if (text == "false") return false;
  throw ConfigError("expected true or false, got '" + text + "'");
}

template <std::size_t N, typename V>
std::array<V, N> parse_array(const std::string& text) {
  auto items = split_list(text);
  if (items.size() != N) {
    throw ConfigError("expected " + std::to_string(N) + " comma-separated values, got '" + text + "'");
  }
  std::array<V, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = parse_value<V>(items[i]);
  return out;
}

template <typename A>
std::string join(const A& values, const std::function<std::string(typename A::value_type)>& f) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ",";
    out += f(values[i]);
  }
  return out;
}

using Setter = std::function<void(const std::string&)>;

std::map<std::string, Setter> model_setters(ModelConfig& m) {
  return {
      {"base_width", [&](const std::string& v) { m.base_width = parse_value<std::size_t>(v); }},
      {"rm_per_phase", [&](const std::string& v) { m.rm_per_phase = parse_array<3, std::size_t>(v); }},
      {"head_version", [&](const std::string& v) {
         try {
           m.head_version = parse_head_version(v);
         } catch (const std::invalid_argument& e) {
           throw ConfigError(e.what());
         }
       }},
      {"weights", [&](const std::string& v) { m.weights = parse_array<4, double>(v); }},
      {"use_prior_i1", [&](const std::string& v) { m.use_prior_i1 = parse_bool(v); }},
      {"use_prior_i3", [&](const std::string& v) { m.use_prior_i3 = parse_bool(v); }},
      {"use_auxiliary_heads", [&](const std::string& v) { m.use_auxiliary_heads = parse_bool(v); }},
      {"patch_size", [&](const std::string& v) { m.patch_size = parse_value<std::size_t>(v); }},
  };
}

std::map<std::string, Setter> run_setters(RunConfig& c) {
  auto s = model_setters(c.model);
  s.insert({
      {"train_annotations", [&](const std::string& v) { c.train_annotations = v; }},
      {"val_annotations", [&](const std::string& v) { c.val_annotations = v; }},
      {"test_annotations", [&](const std::string& v) { c.test_annotations = v; }},
      {"val_fraction", [&](const std::string& v) { c.val_fraction = parse_value<double>(v); }},
      {"samples", [&](const std::string& v) { c.samples = parse_value<std::size_t>(v); }},
      {"augment_flip", [&](const std::string& v) { c.augment_flip = parse_bool(v); }},
      {"seed", [&](const std::string& v) { c.seed = parse_value<std::uint64_t>(v); }},
      {"batch_size", [&](const std::string& v) { c.batch_size = parse_value<std::size_t>(v); }},
      {"epochs", [&](const std::string& v) { c.epochs = parse_value<std::size_t>(v); }},
      {"lr", [&](const std::string& v) { c.lr = parse_value<double>(v); }},
      {"lr_halving_epochs", [&](const std::string& v) { c.lr_halving_epochs = parse_value<std::size_t>(v); }},
      {"momentum", [&](const std::string& v) { c.momentum = parse_value<double>(v); }},
      {"weight_decay", [&](const std::string& v) { c.weight_decay = parse_value<double>(v); }},
      {"out_dir", [&](const std::string& v) { c.out_dir = v; }},
      {"precision", [&](const std::string& v) {
         if (v == "float32") c.precision = Precision::kFloat32;
         else if (v == "float64") c.precision = Precision::kFloat64;
         else throw ConfigError("precision must be float32 or float64, got '" + v + "'");
       }},
  });
  return s;
}

void parse_lines(const std::string& text, const std::string& source, std::map<std::string, Setter>& setters) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError(where + "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    try {
      it->second(value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + key + ": " + e.what());
    }
  }
}

std::string bool_text(bool b) { return b ? "true" : "false"; }

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

void RunConfig::validate() const {
  try {
    model.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (!(val_fraction > 0 && val_fraction < 1)) throw ConfigError("val_fraction must lie in (0, 1)");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (samples < 1) throw ConfigError("samples must be at least 1");
  if (!(lr >= 0)) throw ConfigError("lr must be non-negative");
  if (lr_halving_epochs < 1) throw ConfigError("lr_halving_epochs must be at least 1");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be non-negative");
}

std::string format_model_config(const ModelConfig& m) {
  std::ostringstream out;
  out << "base_width = " << m.base_width << "\n";
  out << "rm_per_phase = " << m.rm_per_phase[0] << "," << m.rm_per_phase[1] << "," << m.rm_per_phase[2] << "\n";
  out << "head_version = " << to_string(m.head_version) << "\n";
  out << "weights = " << format_double(m.weights[0]) << "," << format_double(m.weights[1]) << ","
      << format_double(m.weights[2]) << "," << format_double(m.weights[3]) << "\n";
  out << "use_prior_i1 = " << bool_text(m.use_prior_i1) << "\n";
  out << "use_prior_i3 = " << bool_text(m.use_prior_i3) << "\n";
  out << "use_auxiliary_heads = " << bool_text(m.use_auxiliary_heads) << "\n";
  out << "patch_size = " << m.patch_size << "\n";
  return out.str();
}

ModelConfig parse_model_config(const std::string& text, const std::string& source) {
  ModelConfig m;
  auto setters = model_setters(m);
  parse_lines(text, source, setters);
  return m;
}

std::string format_run_config(const RunConfig& c) {
  std::ostringstream out;
  out << format_model_config(c.model);
  out << "train_annotations = " << c.train_annotations << "\n";
  out << "val_annotations = " << c.val_annotations << "\n";
  out << "test_annotations = " << c.test_annotations << "\n";
  out << "val_fraction = " << format_double(c.val_fraction) << "\n";
  out << "samples = " << c.samples << "\n";
  out << "augment_flip = " << bool_text(c.augment_flip) << "\n";
  out << "seed = " << c.seed << "\n";
  out << "batch_size = " << c.batch_size << "\n";
  out << "epochs = " << c.epochs << "\n";
  out << "lr = " << format_double(c.lr) << "\n";
  out << "lr_halving_epochs = " << c.lr_halving_epochs << "\n";
  out << "momentum = " << format_double(c.momentum) << "\n";
  out << "weight_decay = " << format_double(c.weight_decay) << "\n";
  out << "out_dir = " << c.out_dir << "\n";
  out << "precision = " << (c.precision == Precision::kFloat64 ? "float64" : "float32") << "\n";
  return out.str();
}

RunConfig parse_run_config(const std::string& text, const std::string& source) {
  RunConfig c;
  auto setters = run_setters(c);
  parse_lines(text, source, setters);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_run_config(buffer.str(), path.string());
}

}  // namespace mrf
