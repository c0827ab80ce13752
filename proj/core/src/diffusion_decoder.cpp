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


#include "protodiff/diffusion_decoder.hpp"

#include <cmath>

#include "protodiff/errors.hpp"
#include "protodiff/ops.hpp"

namespace protodiff {

Tensor sinusoidal_embedding(std::span<const int> times, int dim) {
  if (dim < 2 || dim % 2 != 0) throw ParameterError("decoder.time_embed_dim must be even and >= 2");
  const int half = dim / 2;
  const int batch = static_cast<int>(times.size());
  Tensor out(Shape{dim, batch, 1, 1});
  for (int j = 0; j < half; ++j) {
    const double freq = std::exp(-std::log(10000.0) * j / half);
    for (int b = 0; b < batch; ++b) {
      const double arg = times[b] * freq;
      out.at(j, b, 0, 0) = static_cast<float>(std::sin(arg));
      out.at(j + half, b, 0, 0) = static_cast<float>(std::cos(arg));
    }
  }
  return out;
}

DiffusionDecoder::DiffusionDecoder(ParameterStore& store, const DecoderConfig& config, int levels,
                                   int channels, int latent_channels, int num_classes)
    : config_(config), channels_(channels), latent_channels_(latent_channels) {
  if (config.blocks < 1) throw ParameterError("decoder.blocks must be positive");
  if (config.time_embed_dim < 2 || config.time_embed_dim % 2 != 0) {
    throw ParameterError("decoder.time_embed_dim must be even and >= 2");
  }
  const int fused = latent_channels + channels;
  for (int l = 0; l < levels; ++l) {
    const std::string name = "decoder.level" + std::to_string(l);
    levels_.push_back({Conv2d::create(store, name + ".time", config.time_embed_dim, fused, 1),
                       ConvBlock::create(store, name + ".block0", fused, channels),
                       ConvBlock::create(store, name + ".block1", channels, channels),
                       Conv2d::create(store, name + ".mask", channels, 1, 1)});
  }
  for (int b = 0; b < config.blocks; ++b) {
    head_.push_back(ConvBlock::create(store, "decoder.head" + std::to_string(b), channels, channels));
  }
  classifier_ = Conv2d::create(store, "decoder.classifier", channels, num_classes, 1);
}

std::vector<ag::Var> DiffusionDecoder::level_interaction(const ag::Var& noisy_latent,
                                                         const BackboneFeatures& features,
                                                         std::span<const int> times,
                                                         Mode mode) const {
  if (features.levels.size() != levels_.size()) {
    throw ShapeError("level_interaction: expected " + std::to_string(levels_.size()) + " levels");
  }
  const Shape grid = features.levels.front().shape();
  if (noisy_latent.shape().channels != latent_channels_ || noisy_latent.shape().batch != grid.batch) {
    throw ShapeError("level_interaction: latent " + noisy_latent.shape().str() +
                     " incompatible with features " + grid.str());
  }
  if (times.size() != static_cast<std::size_t>(grid.batch)) {
    throw ShapeError("level_interaction: one time per sample required");
  }
  const ag::Var z = ops::resize_bilinear(noisy_latent, grid.height, grid.width);
  const ag::Var temb = ag::Var::constant(sinusoidal_embedding(times, config_.time_embed_dim));

  std::vector<ag::Var> masks;
  masks.reserve(levels_.size());
  for (std::size_t l = 0; l < levels_.size(); ++l) {
    const ag::Var& x = features.levels[l];
    if (!(x.shape() == grid)) throw ShapeError("level_interaction: levels disagree on grid");
    const Level& lv = levels_[l];
    const ag::Var parts[] = {z, x};
    ag::Var h = ops::add_hw_broadcast(ops::concat_channels(parts), lv.time_proj(temb));
    h = lv.second(lv.first(h, mode), mode);
    masks.push_back(ops::sigmoid(lv.to_mask(h)));
  }
  return masks;
}

ag::Var DiffusionDecoder::aggregate(std::span<const ag::Var> masks, const ConditionSet& cond) {
  if (masks.empty() || masks.size() != cond.features.size()) {
    throw ShapeError("aggregate: mask count must equal condition level count");
  }
  ag::Var out = ops::mul_mask(masks[0], cond.features[0]);
  for (std::size_t i = 1; i < masks.size(); ++i) {
    out = ops::add(out, ops::mul_mask(masks[i], cond.features[i]));
  }
  return out;
}

DiffusionDecoder::Prediction DiffusionDecoder::predict(const ag::Var& aggregated, int out_height,
                                                       int out_width, Mode mode) const {
  if (aggregated.shape().channels != channels_) throw ShapeError("predict: channel mismatch");
  Prediction p;
  ag::Var h = aggregated;
  for (const ConvBlock& block : head_) h = block(h, mode);
  p.hidden = h;
  p.grid_logits = classifier_(h);
  p.logits = ops::resize_bilinear(p.grid_logits, out_height, out_width);
  return p;
}

}  // namespace protodiff
