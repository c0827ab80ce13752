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


#include "protodiff/metrics.hpp"

#include <limits>
#include <numeric>

#include "protodiff/errors.hpp"

namespace protodiff {

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : num_classes_(num_classes), counts_(static_cast<std::size_t>(num_classes) * num_classes, 0) {
  if (num_classes < 1) throw ParameterError("confusion matrix needs at least one class");
}

void ConfusionMatrix::add(std::span<const int> prediction, std::span<const int> ground_truth) {
  if (prediction.size() != ground_truth.size()) {
    throw EvaluationError("prediction has " + std::to_string(prediction.size()) +
                          " pixels, ground truth " + std::to_string(ground_truth.size()));
  }
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    const int p = prediction[i];
    const int g = ground_truth[i];
    if (p < 0 || p >= num_classes_ || g < 0 || g >= num_classes_) {
      throw EvaluationError("class index outside [0, " + std::to_string(num_classes_) + ")");
    }
    ++counts_[static_cast<std::size_t>(g) * num_classes_ + p];
  }
}

void ConfusionMatrix::add(const LabelMap& prediction, const LabelMap& ground_truth) {
  if (prediction.height != ground_truth.height || prediction.width != ground_truth.width) {
    throw EvaluationError("prediction and ground truth extents differ");
  }
  add(prediction.indices, ground_truth.indices);
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.num_classes_ != num_classes_) throw EvaluationError("confusion matrix size mismatch");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

MiouResult miou(const ConfusionMatrix& matrix) {
  const int n = matrix.num_classes();
  MiouResult result;
  result.iou.assign(n, std::numeric_limits<double>::quiet_NaN());
  result.present.assign(n, false);
  double sum = 0.0;
  int counted = 0;
  for (int c = 0; c < n; ++c) {
    const std::uint64_t tp = matrix.at(c, c);
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;
    for (int o = 0; o < n; ++o) {
      if (o == c) continue;
      fp += matrix.at(o, c);
      fn += matrix.at(c, o);
    }
    const std::uint64_t uni = tp + fp + fn;
    if (uni == 0) continue;
    result.present[c] = true;
    result.iou[c] = static_cast<double>(tp) / static_cast<double>(uni);
    sum += result.iou[c];
    ++counted;
  }
  result.miou = counted > 0 ? sum / counted : 0.0;
  return result;
}

MiouResult miou(std::span<const LabelMap> predictions, std::span<const LabelMap> ground_truths,
                int num_classes) {
  if (predictions.size() != ground_truths.size()) {
    throw EvaluationError("prediction and ground-truth counts differ");
  }
  ConfusionMatrix matrix(num_classes);
  for (std::size_t i = 0; i < predictions.size(); ++i) matrix.add(predictions[i], ground_truths[i]);
  return miou(matrix);
}

}  // namespace protodiff
