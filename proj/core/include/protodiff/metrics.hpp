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
#include <span>
#include <vector>

#include "protodiff/label_codec.hpp"

namespace protodiff {

// counts[gt * C + pred]. Merging is integer addition, so any accumulation
// order gives the same matrix.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  void add(std::span<const int> prediction, std::span<const int> ground_truth);
  void add(const LabelMap& prediction, const LabelMap& ground_truth);
  void merge(const ConfusionMatrix& other);

  [[nodiscard]] int num_classes() const { return num_classes_; }
  [[nodiscard]] std::uint64_t at(int gt, int pred) const {
    return counts_[static_cast<std::size_t>(gt) * num_classes_ + pred];
  }
  [[nodiscard]] std::uint64_t total() const;

 private:
  int num_classes_;
  std::vector<std::uint64_t> counts_;
};

struct MiouResult {
  double miou = 0.0;
  std::vector<double> iou;     // per class; NaN where the union is empty
  std::vector<bool> present;   // union > 0
};

// IoU_c = TP / (TP + FP + FN); the mean skips classes with an empty union.
MiouResult miou(const ConfusionMatrix& matrix);
MiouResult miou(std::span<const LabelMap> predictions, std::span<const LabelMap> ground_truths,
                int num_classes);

}  // namespace protodiff
