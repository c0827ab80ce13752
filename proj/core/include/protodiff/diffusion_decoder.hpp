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

#include <span>
#include <vector>

#include "protodiff/autograd.hpp"
#include "protodiff/conditioning_backbone.hpp"
#include "protodiff/layers.hpp"

namespace protodiff {

struct DecoderConfig {
  int blocks = 3;            // prediction-branch conv blocks
  int time_embed_dim = 64;
};

// Sinusoidal embedding of integer times, shape (dim, B, 1, 1): the first half
// holds sin(t * w_j), the second half cos(t * w_j), w_j = 10000^(-j / (dim/2)).
Tensor sinusoidal_embedding(std::span<const int> times, int dim);

class DiffusionDecoder {
 public:
  struct Prediction {
    ag::Var hidden;       // (D_ch, B, h, w) input to the classifier and projector
    ag::Var grid_logits;  // (C_cls, B, h, w)
    ag::Var logits;       // (C_cls, B, H, W), bilinear upsampling of grid_logits
  };

  DiffusionDecoder(ParameterStore& store, const DecoderConfig& config, int levels, int channels,
                   int latent_channels, int num_classes);

  [[nodiscard]] const DecoderConfig& config() const { return config_; }

  // Per-level gating masks M_i in (0, 1), shape (1, B, h, w). The noisy latent
  // is resampled bilinearly onto the feature grid, concatenated with X_l, and
  // the projected time embedding is added to every channel.
  [[nodiscard]] std::vector<ag::Var> level_interaction(const ag::Var& noisy_latent,
                                                       const BackboneFeatures& features,
                                                       std::span<const int> times, Mode mode) const;

  // F' = sum_i M_i * F_i with masks broadcast over channels.
  [[nodiscard]] static ag::Var aggregate(std::span<const ag::Var> masks, const ConditionSet& cond);

  [[nodiscard]] Prediction predict(const ag::Var& aggregated, int out_height, int out_width,
                                   Mode mode) const;

 private:
  struct Level {
    Conv2d time_proj;
    ConvBlock first;
    ConvBlock second;
    Conv2d to_mask;
  };

  DecoderConfig config_;
  int channels_;
  int latent_channels_;
  std::vector<Level> levels_;
  std::vector<ConvBlock> head_;
  Conv2d classifier_;
};

}  // namespace protodiff
