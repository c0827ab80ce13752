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


#include "protodiff/model.hpp"

namespace protodiff {

SegDiffusionModel::SegDiffusionModel(const Config& config, std::uint64_t seed)
    : store_(seed),
      codec_(store_, config.data.num_classes, config.label.latent_channels, config.label.scale_s),
      backbone_(store_, config.backbone, 3, config.data.num_classes),
      decoder_(store_, config.decoder, config.backbone.levels, config.backbone.channels,
               config.label.latent_channels, config.data.num_classes),
      projector_(store_, config.backbone.channels, config.proto.dim) {}

SegDiffusionModel::Conditions SegDiffusionModel::condition(const ag::Var& images, Mode mode) const {
  Conditions out;
  out.features = backbone_.extract(images, mode);
  out.conditions = backbone_.condition(out.features, mode);
  return out;
}

SegDiffusionModel::Denoised SegDiffusionModel::denoise(const ag::Var& noisy_latent,
                                                       const Conditions& conditions,
                                                       std::span<const int> times, int out_height,
                                                       int out_width, Mode mode) const {
  Denoised out;
  out.masks = decoder_.level_interaction(noisy_latent, conditions.features, times, mode);
  out.aggregated = DiffusionDecoder::aggregate(out.masks, conditions.conditions);
  out.prediction = decoder_.predict(out.aggregated, out_height, out_width, mode);
  return out;
}

}  // namespace protodiff
