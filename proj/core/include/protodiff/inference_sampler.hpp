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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "protodiff/dataset.hpp"
#include "protodiff/label_codec.hpp"
#include "protodiff/metrics.hpp"
#include "protodiff/model.hpp"
#include "protodiff/noise_schedule.hpp"

namespace protodiff {

// Anything that maps a noisy label latent (D_lab, 1, H, W) at time t to class
// logits (C_cls, 1, H, W).
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual Tensor predict_logits(const Tensor& noisy_latent, int t) = 0;
};

// Binds a trained model to one image. The conditioning pass runs once in the
// constructor; each predict_logits call only runs the decoder.
class ModelDenoiser : public Denoiser {
 public:
  ModelDenoiser(const SegDiffusionModel& model, const Tensor& image);
  Tensor predict_logits(const Tensor& noisy_latent, int t) override;
  [[nodiscard]] int evaluations() const { return evaluations_; }

 private:
  const SegDiffusionModel& model_;
  SegDiffusionModel::Conditions conditions_;
  int height_;
  int width_;
  int evaluations_ = 0;
};

struct SamplerOptions {
  ReencodeMode reencode = ReencodeMode::kHard;
  bool trace = false;
};

struct TraceStep {
  int t = 0;
  int t_next = 0;                // -1 on the final step
  double mean_abs_latent = 0.0;  // mean |z| fed to the denoiser at t
  std::vector<int> prediction;   // argmax at t; filled only with options.trace
};

struct SampleResult {
  LabelMap prediction;
  Tensor logits;        // logits of the final evaluation
  int evaluations = 0;  // denoiser calls
  std::vector<TraceStep> trace;  // one record per denoiser evaluation
};

// Iterative refinement: start from z ~ N(0, I) at t = T, and at every grid
// time predict, re-encode the prediction to a clean latent and move the
// state to the re-noising target by a deterministic DDIM step. The final
// step's argmax is the segmentation.
SampleResult sample(Denoiser& denoiser, const LabelCodec& codec, const NoiseSchedule& schedule,
                    const TimeGrid& grid, int height, int width, std::uint64_t seed,
                    const SamplerOptions& options = {});

// Convenience wrapper for a model and one (3, 1, H, W) image. Throws
// StateError if the model holds non-finite weights.
SampleResult sample_image(const SegDiffusionModel& model, const Tensor& image,
                          const NoiseSchedule& schedule, const TimeGrid& grid, std::uint64_t seed,
                          const SamplerOptions& options = {});

struct InferenceInput {
  std::string name;
  Tensor image;
};

struct InferenceRecord {
  std::string name;
  std::optional<SampleResult> result;
  std::string error;   // set when result is empty
  double seconds = 0.0;
};

// Runs every input in order with per-image seeds derived from `seed` and the
// input index. A failing image is reported and skipped unless
// `stop_on_error`, in which case the error propagates.
std::vector<InferenceRecord> batch_infer(const SegDiffusionModel& model,
                                         std::span<const InferenceInput> inputs,
                                         const NoiseSchedule& schedule, const TimeGrid& grid,
                                         std::uint64_t seed, const SamplerOptions& options = {},
                                         bool stop_on_error = false);

struct EvaluationReport {
  MiouResult miou;
  std::vector<LabelMap> predictions;
  double seconds_per_image = 0.0;
};

// Samples every labelled sample and scores the predictions against its mask.
EvaluationReport evaluate(const SegDiffusionModel& model, std::span<const SegSample> samples,
                          const NoiseSchedule& schedule, const TimeGrid& grid, std::uint64_t seed,
                          const SamplerOptions& options = {});

}  // namespace protodiff
