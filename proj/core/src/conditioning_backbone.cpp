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


#include "protodiff/conditioning_backbone.hpp"

#include <bit>

#include "protodiff/errors.hpp"
#include "protodiff/ops.hpp"

namespace protodiff {

ConditioningBackbone::ConditioningBackbone(ParameterStore& store, const BackboneConfig& config,
                                           int image_channels, int num_classes)
    : config_(config) {
  if (config.kind != "rescnn") {
    throw ParameterError("backbone.kind '" + config.kind + "' is not supported (use rescnn)");
  }
  if (config.channels < 1) throw ParameterError("backbone.channels must be positive");
  if (config.levels < 2) throw ParameterError("backbone.levels must be at least 2");
  if (config.stride < 1 || !std::has_single_bit(static_cast<unsigned>(config.stride))) {
    throw ParameterError("backbone.stride must be a power of two");
  }
  const int downsamples = std::countr_zero(static_cast<unsigned>(config.stride));
  int in = image_channels;
  for (int i = 0; i < std::max(downsamples, 1); ++i) {
    const std::string name = "backbone.stem" + std::to_string(i);
    const int stride = downsamples == 0 ? 1 : 2;
    stem_.push_back({Conv2d::create(store, name + ".conv", in, config.channels, 3, stride, false),
                     BatchNorm2d::create(store, name + ".bn", config.channels)});
    in = config.channels;
  }
  for (int l = 0; l < config.levels; ++l) {
    const std::string name = "backbone.stage" + std::to_string(l);
    stages_.push_back({Conv2d::create(store, name + ".conv_a", config.channels, config.channels, 3, 1, false),
                       BatchNorm2d::create(store, name + ".bn_a", config.channels),
                       Conv2d::create(store, name + ".conv_b", config.channels, config.channels, 3, 1, false),
                       BatchNorm2d::create(store, name + ".bn_b", config.channels)});
  }
  for (int l = 0; l < config.levels; ++l) {
    const std::string name = "branch" + std::to_string(l);
    branches_.push_back({ConvBlock::create(store, name + ".block0", config.channels, config.channels),
                         ConvBlock::create(store, name + ".block1", config.channels, config.channels),
                         Conv2d::create(store, name + ".aux", config.channels, num_classes, 1)});
  }
}

BackboneFeatures ConditioningBackbone::extract(const ag::Var& image, Mode mode) const {
  const Shape& s = image.shape();
  if (s.height < config_.stride || s.width < config_.stride || s.height % config_.stride != 0 ||
      s.width % config_.stride != 0) {
    throw ShapeError("backbone: image " + std::to_string(s.height) + "x" + std::to_string(s.width) +
                     " is not a positive multiple of stride " + std::to_string(config_.stride));
  }
  ag::Var x = image;
  for (const Stem& st : stem_) x = ops::gelu(st.norm(st.conv(x), mode));
  BackboneFeatures out;
  for (std::size_t l = 0; l < stages_.size(); ++l) {
    const Stage& st = stages_[l];
    ag::Var h = ops::gelu(st.norm_a(st.conv_a(x), mode));
    h = st.norm_b(st.conv_b(h), mode);
    x = ops::gelu(ops::add(x, h));
    out.levels.push_back(x);
    out.layer_indices.push_back(static_cast<int>(l) + 1);
  }
  return out;
}

ag::Var ConditioningBackbone::specific_branch(int level, const ag::Var& x, Mode mode) const {
  if (level < 0 || level >= config_.levels) throw RangeError("backbone level out of range");
  if (x.shape().channels != config_.channels) throw ShapeError("specific_branch: channel mismatch");
  const Branch& br = branches_[level];
  return br.second(br.first(x, mode), mode);
}

ag::Var ConditioningBackbone::aux_predict(int level, const ag::Var& features) const {
  if (level < 0 || level >= config_.levels) throw RangeError("backbone level out of range");
  return branches_[level].aux_head(features);
}

ConditionSet ConditioningBackbone::condition(const BackboneFeatures& features, Mode mode) const {
  if (static_cast<int>(features.levels.size()) != config_.levels) {
    throw ShapeError("condition: level count mismatch");
  }
  ConditionSet set;
  for (int l = 0; l < config_.levels; ++l) {
    ag::Var f = specific_branch(l, features.levels[l], mode);
    set.aux_logits.push_back(aux_predict(l, f));
    set.features.push_back(std::move(f));
  }
  return set;
}

}  // namespace protodiff
