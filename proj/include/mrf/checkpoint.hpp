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

#include "mrf/network.hpp"

namespace mrf {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointHeader {
  std::uint32_t version = kCheckpointVersion;
  ModelConfig config;
  std::size_t epoch = 0;
};

/// Layout (little endian): "MRFC", u32 version, u32 header length, header
/// text (model config plus epoch), u32 tensor count, per tensor {u32 name
/// length, name, u8 dtype (0 = float32), u32 rank, u64 extents..., u64 byte
/// offset}, u64 payload length, float32 payload, u32 CRC-32 of the payload.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, Network<T>& network, std::size_t epoch = 0);

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

/// Loads values into an existing network; the stored configuration must equal
/// the network's, and every tensor must match by name and shape.
template <typename T>
CheckpointHeader load_checkpoint_into(const std::filesystem::path& path, Network<T>& network);

/// Names the first configuration field that differs, with both values; empty if equal.
std::string describe_config_mismatch(const ModelConfig& stored, const ModelConfig& expected);

}  // namespace mrf
