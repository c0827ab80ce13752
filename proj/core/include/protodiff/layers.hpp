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
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "protodiff/autograd.hpp"

namespace protodiff {

enum class Mode { kTrain, kEval };

// Owns every trainable parameter and every non-trainable buffer (batch-norm
// running statistics) of a model under a stable dotted name. Iteration order
// is registration order, which fixes checkpoint layout and optimizer order.
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 0) : rng_(seed) {}

  ag::Var add_parameter(const std::string& name, Tensor init);
  std::shared_ptr<Tensor> add_buffer(const std::string& name, Tensor init);

  // He-uniform initialized convolution weight (out, in, k, k).
  ag::Var add_conv_weight(const std::string& name, int out, int in, int k);

  [[nodiscard]] const std::vector<std::pair<std::string, ag::Var>>& parameters() const {
    return params_;
  }
  [[nodiscard]] const std::vector<std::pair<std::string, std::shared_ptr<Tensor>>>& buffers()
      const {
    return buffers_;
  }
  [[nodiscard]] ag::Var parameter(const std::string& name) const;
  [[nodiscard]] std::size_t parameter_count() const;

  void zero_grad();
  [[nodiscard]] bool all_finite() const;

 private:
  std::mt19937_64 rng_;
  std::vector<std::pair<std::string, ag::Var>> params_;
  std::vector<std::pair<std::string, std::shared_ptr<Tensor>>> buffers_;
  std::map<std::string, std::size_t> index_;
};

struct Conv2d {
  ag::Var weight;
  ag::Var bias;  // undefined when the layer has none
  int stride = 1;
  int pad = 0;

  static Conv2d create(ParameterStore& store, const std::string& name, int in, int out, int k,
                       int stride = 1, bool with_bias = true);
  [[nodiscard]] ag::Var operator()(const ag::Var& x) const;
  [[nodiscard]] int out_channels() const { return weight.shape().channels; }
};

struct BatchNorm2d {
  ag::Var gamma;
  ag::Var beta;
  std::shared_ptr<Tensor> running_mean;
  std::shared_ptr<Tensor> running_var;

  static BatchNorm2d create(ParameterStore& store, const std::string& name, int channels);
  [[nodiscard]] ag::Var operator()(const ag::Var& x, Mode mode) const;
};

// 3x3 convolution -> batch norm -> GELU -> 1x1 convolution.
struct ConvBlock {
  Conv2d conv3;
  BatchNorm2d norm;
  Conv2d conv1;

  static ConvBlock create(ParameterStore& store, const std::string& name, int in, int out);
  [[nodiscard]] ag::Var operator()(const ag::Var& x, Mode mode) const;
};

}  // namespace protodiff
