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

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace protodiff {

// Four-dimensional extent in channel-major batch layout: (channels, batch,
// height, width). Element (c, b, y, x) lives at ((c * batch + b) * height + y)
// * width + x, so every channel is one contiguous block across the batch and
// a convolution's GEMM output lands in place without a transpose.
struct Shape {
  int channels = 1;
  int batch = 1;
  int height = 1;
  int width = 1;

  [[nodiscard]] std::size_t numel() const {
    return static_cast<std::size_t>(channels) * batch * height * width;
  }
  [[nodiscard]] std::size_t plane() const {
    return static_cast<std::size_t>(height) * width;
  }
  [[nodiscard]] std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  [[nodiscard]] const Shape& shape() const { return shape_; }
  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] bool empty() const { return data_.empty(); }

  [[nodiscard]] float* data() { return data_.data(); }
  [[nodiscard]] const float* data() const { return data_.data(); }
  [[nodiscard]] std::span<float> values() { return data_; }
  [[nodiscard]] std::span<const float> values() const { return data_; }
  [[nodiscard]] std::vector<float>& storage() { return data_; }

  [[nodiscard]] std::size_t index(int c, int b, int y, int x) const {
    return ((static_cast<std::size_t>(c) * shape_.batch + b) * shape_.height + y) *
               shape_.width +
           x;
  }
  float& at(int c, int b, int y, int x) { return data_[index(c, b, y, x)]; }
  [[nodiscard]] float at(int c, int b, int y, int x) const {
    return data_[index(c, b, y, x)];
  }

  // Pointer to the H*W plane of channel c, sample b.
  float* plane(int c, int b) { return data_.data() + index(c, b, 0, 0); }
  [[nodiscard]] const float* plane(int c, int b) const {
    return data_.data() + index(c, b, 0, 0);
  }

  void fill(float v);
  // Reinterprets the extent without moving data; element counts must match.
  void reshape(Shape shape);

  [[nodiscard]] bool all_finite() const;
  [[nodiscard]] float max_abs() const;

 private:
  Shape shape_{0, 0, 0, 0};
  std::vector<float> data_;
};

// Copies sample b out of a batch tensor (result has batch = 1).
Tensor slice_batch(const Tensor& t, int b);
// Concatenates single- or multi-sample tensors along the batch axis.
Tensor stack_batch(std::span<const Tensor> parts);

void add_inplace(Tensor& dst, const Tensor& src);
float max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace protodiff
