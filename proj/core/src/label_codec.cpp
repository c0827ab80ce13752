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


#include "protodiff/label_codec.hpp"

#include <cmath>

#include "protodiff/errors.hpp"
#include "protodiff/ops.hpp"

namespace protodiff {

const char* to_string(LabelSource source) {
  return source == LabelSource::kGroundTruth ? "ground_truth" : "pseudo";
}

void LabelMap::validate() const {
  if (height <= 0 || width <= 0) throw ValidationError("label map must be non-empty");
  if (num_classes < 1) throw ValidationError("label map needs at least one class");
  if (indices.size() != static_cast<std::size_t>(height) * width) {
    throw ValidationError("label map size does not match its extent");
  }
  for (int v : indices) {
    if (v < 0 || v >= num_classes) {
      throw ValidationError("label index " + std::to_string(v) + " outside [0, " +
                            std::to_string(num_classes) + ")");
    }
  }
}

Tensor one_hot(const LabelMap& label) {
  label.validate();
  return one_hot(label.indices, 1, label.height, label.width, label.num_classes);
}

Tensor one_hot(std::span<const int> labels, int batch, int height, int width, int num_classes) {
  const std::size_t pixels = static_cast<std::size_t>(batch) * height * width;
  if (labels.size() != pixels) throw ShapeError("one_hot: label count mismatch");
  Tensor out(Shape{num_classes, batch, height, width});
  for (std::size_t p = 0; p < pixels; ++p) {
    const int c = labels[p];
    if (c < 0 || c >= num_classes) {
      throw ValidationError("one_hot: index " + std::to_string(c) + " >= " +
                            std::to_string(num_classes));
    }
    out.data()[c * pixels + p] = 1.0f;
  }
  return out;
}

LabelCodec::LabelCodec(ParameterStore& store, int num_classes, int latent_channels, float scale)
    : num_classes_(num_classes), latent_channels_(latent_channels), scale_(scale) {
  if (num_classes < 2) throw ParameterError("label codec needs at least two classes");
  if (latent_channels < 1) throw ParameterError("label.latent_channels must be positive");
  if (!(scale > 0.0f)) throw ParameterError("label.scale_s must be positive");
  pointwise_ = Conv2d::create(store, "label.encoder.pointwise", num_classes, latent_channels, 1);
  spatial_ = Conv2d::create(store, "label.encoder.spatial", latent_channels, latent_channels, 3);
}

ag::Var LabelCodec::encode(const ag::Var& onehot, std::vector<bool>* degenerate) const {
  if (onehot.shape().channels != num_classes_) {
    throw ShapeError("label codec expects " + std::to_string(num_classes_) + " channels, got " +
                     onehot.shape().str());
  }
  return ops::minmax_scale_per_sample(spatial_(pointwise_(onehot)), scale_, degenerate);
}

LabelLatent LabelCodec::encode_labels(const Tensor& onehot) const {
  return encode_labels(onehot, scale_);
}

LabelLatent LabelCodec::encode_labels(const Tensor& onehot, float scale) const {
  if (!(scale > 0.0f)) throw ParameterError("encode_labels: scale must be positive");
  if (onehot.shape().channels != num_classes_) {
    throw ShapeError("label codec expects " + std::to_string(num_classes_) + " channels, got " +
                     onehot.shape().str());
  }
  ag::NoGradGuard no_grad;
  LabelLatent latent;
  latent.scale = scale;
  ag::Var z = ops::minmax_scale_per_sample(spatial_(pointwise_(ag::Var::constant(onehot))), scale,
                                           &latent.degenerate);
  latent.values = z.value();
  return latent;
}

LabelLatent LabelCodec::reencode_prediction(const Tensor& logits, ReencodeMode mode) const {
  if (!logits.all_finite()) throw NumericError("reencode_prediction: non-finite logits");
  const Shape& s = logits.shape();
  if (mode == ReencodeMode::kHard) {
    const std::vector<int> labels = ops::argmax_channels(logits);
    return encode_labels(one_hot(labels, s.batch, s.height, s.width, s.channels));
  }
  return encode_labels(ops::softmax_channels(logits));
}

}  // namespace protodiff
