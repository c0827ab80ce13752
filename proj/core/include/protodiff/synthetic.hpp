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
#include <random>

#include "protodiff/image_io.hpp"
#include "protodiff/label_codec.hpp"

namespace protodiff {

struct SyntheticConfig {
  int n_train = 200;
  int n_val = 50;
  int image_size = 64;
  int num_classes = 3;
  double rho = 0.1;               // target disagreement of pseudo masks
  double labeled_fraction = 0.5;  // train images that keep their GT mask
  std::uint64_t seed = 0;
};

struct SyntheticSample {
  RgbImage image;
  LabelMap truth;
  LabelMap pseudo;
};

// One image of textured background with 1-3 coloured shapes. Class c >= 1 is
// drawn as an ellipse, rectangle or thick vessel-like curve depending on
// (c - 1) mod 3, with a class-specific colour.
SyntheticSample generate_synthetic_sample(const SyntheticConfig& config, std::uint64_t sample_seed);

// Degrades a mask into a pseudo label: a one-pixel erosion or dilation of the
// foreground followed by random class flips on still-agreeing pixels, so the
// expected disagreement with the input is max(rho, boundary change).
LabelMap corrupt_mask(const LabelMap& truth, double rho, std::mt19937_64& rng);

// Writes <root>/train and <root>/val. Train images in the labelled fraction get
// masks/; the rest get pseudo_masks/ only. Val images get masks/.
void make_synthetic(const std::filesystem::path& root, const SyntheticConfig& config);

// Per-sample seed derived from (master seed, split, index).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

}  // namespace protodiff
