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
#include <memory>
#include <span>
#include <vector>

#include "protodiff/conditioning_backbone.hpp"
#include "protodiff/config.hpp"
#include "protodiff/diffusion_decoder.hpp"
#include "protodiff/label_codec.hpp"
#include "protodiff/layers.hpp"
#include "protodiff/prototype_bank.hpp"

namespace protodiff {

// The full denoiser f(z_t, t, image): label codec, conditioning backbone,
// diffusion decoder and latent projector over one shared parameter store.
class SegDiffusionModel {
 public:
  struct Conditions {
    BackboneFeatures features;
    ConditionSet conditions;
  };

  struct Denoised {
    std::vector<ag::Var> masks;
    ag::Var aggregated;
    DiffusionDecoder::Prediction prediction;
  };

  SegDiffusionModel(const Config& config, std::uint64_t seed);
  SegDiffusionModel(const SegDiffusionModel&) = delete;
  SegDiffusionModel& operator=(const SegDiffusionModel&) = delete;

  [[nodiscard]] ParameterStore& store() { return store_; }
  [[nodiscard]] const ParameterStore& store() const { return store_; }
  [[nodiscard]] const LabelCodec& codec() const { return codec_; }
  [[nodiscard]] const ConditioningBackbone& backbone() const { return backbone_; }
  [[nodiscard]] const DiffusionDecoder& decoder() const { return decoder_; }
  [[nodiscard]] const LatentProjector& projector() const { return projector_; }
  [[nodiscard]] int num_classes() const { return codec_.num_classes(); }

  // Image-dependent part, computed once per image at inference.
  [[nodiscard]] Conditions condition(const ag::Var& images, Mode mode) const;
  // Time-dependent part: noisy latent (D_lab, B, H, W) at image resolution.
  [[nodiscard]] Denoised denoise(const ag::Var& noisy_latent, const Conditions& conditions,
                                 std::span<const int> times, int out_height, int out_width,
                                 Mode mode) const;

 private:
  ParameterStore store_;
  LabelCodec codec_;
  ConditioningBackbone backbone_;
  DiffusionDecoder decoder_;
  LatentProjector projector_;
};

}  // namespace protodiff
