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

#include <optional>
#include <span>
#include <vector>

#include "protodiff/autograd.hpp"
#include "protodiff/layers.hpp"
#include "protodiff/tensor.hpp"

namespace protodiff {

enum class LabelSource { kGroundTruth, kPseudo };

const char* to_string(LabelSource source);

// Dense categorical label grid, row-major H x W.
struct LabelMap {
  int height = 0;
  int width = 0;
  int num_classes = 0;
  std::vector<int> indices;
  LabelSource source = LabelSource::kGroundTruth;

  // Throws ValidationError unless H, W > 0 and every index is in [0, C).
  void validate() const;
  [[nodiscard]] int at(int y, int x) const { return indices[static_cast<std::size_t>(y) * width + x]; }
};

// (C, 1, H, W) indicator field with exactly one 1 per pixel.
Tensor one_hot(const LabelMap& label);
// (C, B, H, W) indicator field for a (B, H, W) label grid.
Tensor one_hot(std::span<const int> labels, int batch, int height, int width, int num_classes);

enum class ReencodeMode { kHard, kSoft };

struct LabelLatent {
  Tensor values;             // (D_lab, B, H, W)
  float scale = 1.0f;
  std::optional<int> time;   // nullopt for a clean latent
  std::vector<bool> degenerate;  // per sample: encoder output was constant
};

// Learned label encoder: 1x1 conv (C_cls -> D_lab) then 3x3 conv
// (D_lab -> D_lab), followed by per-sample min-max normalization to [-1, 1]
// and multiplication by the signal scale s.
class LabelCodec {
 public:
  LabelCodec(ParameterStore& store, int num_classes, int latent_channels, float scale);

  [[nodiscard]] int num_classes() const { return num_classes_; }
  [[nodiscard]] int latent_channels() const { return latent_channels_; }
  [[nodiscard]] float scale() const { return scale_; }
  [[nodiscard]] const Conv2d& pointwise() const { return pointwise_; }
  [[nodiscard]] const Conv2d& spatial() const { return spatial_; }

  // Differentiable encoding used during training.
  [[nodiscard]] ag::Var encode(const ag::Var& onehot, std::vector<bool>* degenerate = nullptr) const;

  [[nodiscard]] LabelLatent encode_labels(const Tensor& onehot) const;
  [[nodiscard]] LabelLatent encode_labels(const Tensor& onehot, float scale) const;

  // Maps decoder logits (C_cls, B, H, W) back to a clean latent: hard mode
  // encodes the argmax one-hot, soft mode encodes the per-pixel softmax.
  [[nodiscard]] LabelLatent reencode_prediction(const Tensor& logits, ReencodeMode mode) const;

 private:
  int num_classes_;
  int latent_channels_;
  float scale_;
  Conv2d pointwise_;
  Conv2d spatial_;
};

}  // namespace protodiff
