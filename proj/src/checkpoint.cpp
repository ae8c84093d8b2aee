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

#include "mrf/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mrf/config.hpp"

namespace mrf {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'M', 'R', 'F', 'C'};
constexpr std::uint8_t kFloat32 = 0;

class Writer {
 public:
  template <typename V>
  void put(V v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(V));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    bytes.insert(bytes.end(), p, p + n);
  }
  std::vector<char> bytes;
};

class Reader {
 public:
  Reader(std::vector<char> data, std::string source) : bytes(std::move(data)), where(std::move(source)) {}
  template <typename V>
  V get() {
    V v;
    std::memcpy(&v, take(sizeof(V)), sizeof(V));
    return v;
  }
  const char* take(std::size_t n) {
    if (n > bytes.size() - pos) throw CheckpointError(where + ": truncated checkpoint");
    const char* p = bytes.data() + pos;
    pos += n;
    return p;
  }
  std::vector<char> bytes;
  std::size_t pos = 0;
  std::string where;
};

struct Record {
  std::string name;
  Shape shape;
  std::uint64_t offset = 0;
};

struct Parsed {
  CheckpointHeader header;
  std::vector<Record> records;
  std::vector<float> payload;
};

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Parsed parse(const std::filesystem::path& path, bool with_payload) {
  Reader r(read_file(path), path.string());
  if (std::memcmp(r.take(4), kMagic, 4) != 0) throw CheckpointError(path.string() + ": not a checkpoint (bad magic)");
  Parsed out;
  out.header.version = r.get<std::uint32_t>();
  if (out.header.version != kCheckpointVersion) {
    throw CheckpointError(path.string() + ": unsupported checkpoint version " + std::to_string(out.header.version) +
                          " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const auto header_len = r.get<std::uint32_t>();
  std::string text(r.take(header_len), header_len);
  // The epoch line is ours; everything else is model configuration.
  std::istringstream lines(text);
  std::string line, model_text;
  while (std::getline(lines, line)) {
    if (line.rfind("epoch = ", 0) == 0) {
      out.header.epoch = std::stoull(line.substr(8));
    } else {
      model_text += line + "\n";
    }
  }
  try {
    out.header.config = parse_model_config(model_text, path.string() + " header");
  } catch (const ConfigError& e) {
    throw CheckpointError(e.what());
  }
  if (!with_payload) return out;

  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    Record rec;
    const auto name_len = r.get<std::uint32_t>();
    rec.name.assign(r.take(name_len), name_len);
    if (r.get<std::uint8_t>() != kFloat32) throw CheckpointError(path.string() + ": unsupported dtype for " + rec.name);
    const auto rank = r.get<std::uint32_t>();
    for (std::uint32_t k = 0; k < rank; ++k) rec.shape.push_back(r.get<std::uint64_t>());
    rec.offset = r.get<std::uint64_t>();
    out.records.push_back(std::move(rec));
  }
  const auto payload_len = r.get<std::uint64_t>();
  const char* payload = r.take(payload_len);
  const auto stored_crc = r.get<std::uint32_t>();
  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(payload), static_cast<uInt>(payload_len)));
  if (crc != stored_crc) throw CheckpointError(path.string() + ": checksum mismatch (corrupt file)");
  if (r.pos != r.bytes.size()) throw CheckpointError(path.string() + ": trailing bytes after checksum");
  if (payload_len % sizeof(float) != 0) throw CheckpointError(path.string() + ": misaligned payload");
  out.payload.resize(payload_len / sizeof(float));
  std::memcpy(out.payload.data(), payload, payload_len);
  for (const auto& rec : out.records) {
    if (rec.offset % sizeof(float) != 0 || rec.offset / sizeof(float) + numel(rec.shape) > out.payload.size()) {
      throw CheckpointError(path.string() + ": tensor " + rec.name + " lies outside the payload");
    }
  }
  return out;
}

}  // namespace

std::string describe_config_mismatch(const ModelConfig& stored, const ModelConfig& expected) {
  std::istringstream a(format_model_config(stored)), b(format_model_config(expected));
  std::string la, lb;
  while (std::getline(a, la) && std::getline(b, lb)) {
    if (la == lb) continue;
    const auto eq = la.find(" = ");
    return la.substr(0, eq) + " differs: checkpoint has " + la.substr(eq + 3) + ", model has " +
           lb.substr(lb.find(" = ") + 3);
  }
  return {};
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, Network<T>& network, std::size_t epoch) {
  Writer w;
  w.put_bytes(kMagic, 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  const std::string header = format_model_config(network.config()) + "epoch = " + std::to_string(epoch) + "\n";
  w.put<std::uint32_t>(static_cast<std::uint32_t>(header.size()));
  w.put_bytes(header.data(), header.size());

  auto params = network.parameters();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  std::vector<float> payload;
  for (auto& p : params) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(p.name.size()));
    w.put_bytes(p.name.data(), p.name.size());
    w.put<std::uint8_t>(kFloat32);
    const Shape& s = p.tensor->shape();
    w.put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    for (auto e : s) w.put<std::uint64_t>(e);
    w.put<std::uint64_t>(payload.size() * sizeof(float));
    for (auto v : p.tensor->values()) payload.push_back(static_cast<float>(v));
  }
  const std::size_t payload_bytes = payload.size() * sizeof(float);
  w.put<std::uint64_t>(payload_bytes);
  w.put_bytes(payload.data(), payload_bytes);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(payload.data()), static_cast<uInt>(payload_bytes))));

  // Write then rename so a crash never leaves a half-written checkpoint.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
    out.write(w.bytes.data(), static_cast<std::streamsize>(w.bytes.size()));
    if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) { return parse(path, false).header; }

template <typename T>
CheckpointHeader load_checkpoint_into(const std::filesystem::path& path, Network<T>& network) {
  Parsed parsed = parse(path, true);
  if (const auto diff = describe_config_mismatch(parsed.header.config, network.config()); !diff.empty()) {
    throw CheckpointError(path.string() + ": configuration mismatch: " + diff);
  }
  auto params = network.parameters();
  if (params.size() != parsed.records.size()) {
    throw CheckpointError(path.string() + ": checkpoint holds " + std::to_string(parsed.records.size()) +
                          " tensors, model expects " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& rec = parsed.records[i];
    if (rec.name != params[i].name) {
      throw CheckpointError(path.string() + ": tensor " + std::to_string(i) + " is '" + rec.name + "', model expects '" +
                            params[i].name + "'");
    }
    if (rec.shape != params[i].tensor->shape()) {
      throw CheckpointError(path.string() + ": tensor " + rec.name + " has shape " + to_string(rec.shape) +
                            ", model expects " + to_string(params[i].tensor->shape()));
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].tensor->data();
    const float* src = parsed.payload.data() + parsed.records[i].offset / sizeof(float);
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = static_cast<T>(src[k]);
  }
  return parsed.header;
}

template void save_checkpoint<float>(const std::filesystem::path&, Network<float>&, std::size_t);
template void save_checkpoint<double>(const std::filesystem::path&, Network<double>&, std::size_t);
template CheckpointHeader load_checkpoint_into<float>(const std::filesystem::path&, Network<float>&);
template CheckpointHeader load_checkpoint_into<double>(const std::filesystem::path&, Network<double>&);

}  // namespace mrf
