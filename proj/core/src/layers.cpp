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


#include "protodiff/layers.hpp"

#include <cmath>

#include "protodiff/errors.hpp"
#include "protodiff/ops.hpp"

namespace protodiff {

ag::Var ParameterStore::add_parameter(const std::string& name, Tensor init) {
  if (index_.contains(name)) throw ParameterError("duplicate parameter name: " + name);
  index_[name] = params_.size();
  ag::Var v = ag::Var::leaf(std::move(init));
  params_.emplace_back(name, v);
  return v;
}

std::shared_ptr<Tensor> ParameterStore::add_buffer(const std::string& name, Tensor init) {
  for (const auto& [n, _] : buffers_) {
    if (n == name) throw ParameterError("duplicate buffer name: " + name);
  }
  auto t = std::make_shared<Tensor>(std::move(init));
  buffers_.emplace_back(name, t);
  return t;
}

ag::Var ParameterStore::add_conv_weight(const std::string& name, int out, int in, int k) {
  Tensor w(Shape{out, in, k, k});
  const double fan_in = static_cast<double>(in) * k * k;
  const float bound = static_cast<float>(std::sqrt(6.0 / fan_in));
  std::uniform_real_distribution<float> dist(-bound, bound);
  for (float& v : w.values()) v = dist(rng_);
  return add_parameter(name, std::move(w));
}

ag::Var ParameterStore::parameter(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ParameterError("unknown parameter: " + name);
  return params_[it->second].second;
}

std::size_t ParameterStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, v] : params_) n += v.value().size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [_, v] : params_) v.zero_grad();
}

bool ParameterStore::all_finite() const {
  for (const auto& [_, v] : params_) {
    if (!v.value().all_finite()) return false;
  }
  for (const auto& [_, b] : buffers_) {
    if (!b->all_finite()) return false;
  }
  return true;
}

Conv2d Conv2d::create(ParameterStore& store, const std::string& name, int in, int out, int k,
                      int stride, bool with_bias) {
  Conv2d conv;
  conv.weight = store.add_conv_weight(name + ".weight", out, in, k);
  if (with_bias) conv.bias = store.add_parameter(name + ".bias", Tensor(Shape{out, 1, 1, 1}));
  conv.stride = stride;
  conv.pad = k / 2;
  return conv;
}

ag::Var Conv2d::operator()(const ag::Var& x) const {
  return ops::conv2d(x, weight, bias, stride, pad);
}

BatchNorm2d BatchNorm2d::create(ParameterStore& store, const std::string& name, int channels) {
  BatchNorm2d bn;
  bn.gamma = store.add_parameter(name + ".gamma", Tensor(Shape{channels, 1, 1, 1}, 1.0f));
  bn.beta = store.add_parameter(name + ".beta", Tensor(Shape{channels, 1, 1, 1}, 0.0f));
  bn.running_mean = store.add_buffer(name + ".running_mean", Tensor(Shape{channels, 1, 1, 1}));
  bn.running_var = store.add_buffer(name + ".running_var", Tensor(Shape{channels, 1, 1, 1}, 1.0f));
  return bn;
}

ag::Var BatchNorm2d::operator()(const ag::Var& x, Mode mode) const {
  return ops::batch_norm(x, gamma, beta, *running_mean, *running_var, mode == Mode::kTrain);
}

ConvBlock ConvBlock::create(ParameterStore& store, const std::string& name, int in, int out) {
  ConvBlock block;
  block.conv3 = Conv2d::create(store, name + ".conv3", in, out, 3, 1, false);
  block.norm = BatchNorm2d::create(store, name + ".bn", out);
  block.conv1 = Conv2d::create(store, name + ".conv1", out, out, 1);
  return block;
}

ag::Var ConvBlock::operator()(const ag::Var& x, Mode mode) const {
  return conv1(ops::gelu(norm(conv3(x), mode)));
}

}  // namespace protodiff
