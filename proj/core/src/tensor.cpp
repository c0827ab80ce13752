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


#include "protodiff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "protodiff/errors.hpp"

namespace protodiff {

std::string Shape::str() const {
  return "(" + std::to_string(channels) + "," + std::to_string(batch) + "," +
         std::to_string(height) + "," + std::to_string(width) + ")";
}

Tensor::Tensor(Shape shape, float fill) : shape_(shape), data_(shape.numel(), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> values)
    : shape_(shape), data_(std::move(values)) {
  if (data_.size() != shape_.numel()) {
    throw ShapeError("tensor data size " + std::to_string(data_.size()) +
                     " does not match shape " + shape_.str());
  }
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::reshape(Shape shape) {
  if (shape.numel() != data_.size()) {
    throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
  }
  shape_ = shape;
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

float Tensor::max_abs() const {
  float m = 0.0f;
  for (float v : data_) m = std::max(m, std::abs(v));
  return m;
}

Tensor slice_batch(const Tensor& t, int b) {
  const Shape& s = t.shape();
  if (b < 0 || b >= s.batch) throw ShapeError("batch index out of range");
  Tensor out(Shape{s.channels, 1, s.height, s.width});
  for (int c = 0; c < s.channels; ++c) {
    std::memcpy(out.plane(c, 0), t.plane(c, b), s.plane() * sizeof(float));
  }
  return out;
}

Tensor stack_batch(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("cannot stack an empty tensor list");
  const Shape& first = parts.front().shape();
  int total = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    if (s.channels != first.channels || s.height != first.height || s.width != first.width) {
      throw ShapeError("stack_batch: " + s.str() + " vs " + first.str());
    }
    total += s.batch;
  }
  Tensor out(Shape{first.channels, total, first.height, first.width});
  int offset = 0;
  for (const Tensor& p : parts) {
    for (int b = 0; b < p.shape().batch; ++b, ++offset) {
      for (int c = 0; c < first.channels; ++c) {
        std::memcpy(out.plane(c, offset), p.plane(c, b), first.plane() * sizeof(float));
      }
    }
  }
  return out;
}

void add_inplace(Tensor& dst, const Tensor& src) {
  if (!(dst.shape() == src.shape())) {
    throw ShapeError("add_inplace: " + dst.shape().str() + " vs " + src.shape().str());
  }
  float* d = dst.data();
  const float* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError("max_abs_diff: " + a.shape().str() + " vs " + b.shape().str());
  }
  float m = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace protodiff
