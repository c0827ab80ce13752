// Copyright 2026 The protodiff Authors
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
#include <string>
#include <variant>
#include <vector>

#include "protodiff/tensor.hpp"

namespace protodiff {

struct NamedArray {
  std::string name;
  Shape shape;
  std::variant<std::vector<float>, std::vector<double>> data;
};

// Versioned binary container:
//   "PDCKPT\0\0" | u32 version | str config | str rng | u64 iteration |
//   u32 count | count x (str name | 4 x i32 shape | u8 dtype | u64 n | n values)
// Strings are u64 length + bytes; numbers are little-endian.
struct CheckpointData {
  static constexpr std::uint32_t kVersion = 1;

  std::uint32_t version = kVersion;
  std::string config_text;
  std::string rng_state;
  std::uint64_t iteration = 0;
  std::vector<NamedArray> arrays;

  [[nodiscard]] const NamedArray& find(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data);
CheckpointData read_checkpoint(const std::filesystem::path& path);

}  // namespace protodiff
