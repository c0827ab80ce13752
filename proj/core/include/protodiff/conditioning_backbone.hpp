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

#include <string>
#include <vector>

#include "protodiff/autograd.hpp"
#include "protodiff/layers.hpp"

namespace protodiff {

struct BackboneConfig {
  std::string kind = "rescnn";
  int channels = 64;  // D_ch
  int levels = 4;     // N
  int stride = 4;     // power of two
};

// N feature fields X_l on a common grid (image size / stride).
struct BackboneFeatures {
  std::vector<ag::Var> levels;
  std::vector<int> layer_indices;
};

// Visual-specific condition features F_i and their auxiliary logits.
struct ConditionSet {
  std::vector<ag::Var> features;
  std::vector<ag::Var> aux_logits;
};

// Small residual CNN standing in for a transformer backbone. A stem of
// log2(stride) strided 3x3 convolutions reaches the feature grid; each of the
// N residual stages that follow emits one level.
class ConditioningBackbone {
 public:
  ConditioningBackbone(ParameterStore& store, const BackboneConfig& config, int image_channels,
                       int num_classes);

  [[nodiscard]] const BackboneConfig& config() const { return config_; }
  [[nodiscard]] int levels() const { return config_.levels; }
  [[nodiscard]] int channels() const { return config_.channels; }

  // image: (3, B, H, W). H and W must be positive multiples of the stride.
  [[nodiscard]] BackboneFeatures extract(const ag::Var& image, Mode mode) const;
  // Two stacked (3x3 conv, BN, GELU, 1x1 conv) blocks.
  [[nodiscard]] ag::Var specific_branch(int level, const ag::Var& x, Mode mode) const;
  [[nodiscard]] ag::Var aux_predict(int level, const ag::Var& features) const;
  [[nodiscard]] ConditionSet condition(const BackboneFeatures& features, Mode mode) const;

 private:
  struct Stem {
    Conv2d conv;
    BatchNorm2d norm;
  };
  struct Stage {
    Conv2d conv_a;
    BatchNorm2d norm_a;
    Conv2d conv_b;
    BatchNorm2d norm_b;
  };
  struct Branch {
    ConvBlock first;
    ConvBlock second;
    Conv2d aux_head;
  };

  BackboneConfig config_;
  std::vector<Stem> stem_;
  std::vector<Stage> stages_;
  std::vector<Branch> branches_;
};

}  // namespace protodiff
