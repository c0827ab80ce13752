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

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "protodiff/label_codec.hpp"
#include "protodiff/tensor.hpp"

namespace protodiff {

// Interleaved 8-bit RGB, row-major.
struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;  // height * width * 3
};

RgbImage read_rgb_png(const std::filesystem::path& path);
void write_rgb_png(const std::filesystem::path& path, const RgbImage& image);

// Masks are 8-bit palette PNGs whose palette index is the class index. Plain
// 8-bit grayscale PNGs are accepted on read with the gray level as the index.
LabelMap read_mask_png(const std::filesystem::path& path, int num_classes,
                       LabelSource source = LabelSource::kGroundTruth);
void write_mask_png(const std::filesystem::path& path, const LabelMap& mask);

// Fixed display colour of a class index (background is black).
std::array<std::uint8_t, 3> class_color(int index);

// (3, 1, H, W) tensor with channel values mapped from [0, 255] to [-1, 1].
Tensor image_to_tensor(const RgbImage& image);
// Alpha-blends class colours over the image (background left untouched).
RgbImage overlay(const RgbImage& image, const LabelMap& mask, float alpha = 0.5f);

}  // namespace protodiff
