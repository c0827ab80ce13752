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


#include "protodiff/inference_sampler.hpp"

#include <chrono>
#include <cmath>
#include <random>

#include "protodiff/errors.hpp"
#include "protodiff/ops.hpp"
#include "protodiff/synthetic.hpp"

namespace protodiff {

ModelDenoiser::ModelDenoiser(const SegDiffusionModel& model, const Tensor& image)
    : model_(model), height_(image.shape().height), width_(image.shape().width) {
  if (image.shape().channels != 3 || image.shape().batch != 1) {
    throw ShapeError("denoiser expects a (3, 1, H, W) image, got " + image.shape().str());
  }
  ag::NoGradGuard no_grad;
  conditions_ = model_.condition(ag::Var::constant(image), Mode::kEval);
}

Tensor ModelDenoiser::predict_logits(const Tensor& noisy_latent, int t) {
  ag::NoGradGuard no_grad;
  ++evaluations_;
  const std::vector<int> times{t};
  const auto out = model_.denoise(ag::Var::constant(noisy_latent), conditions_, times, height_,
                                  width_, Mode::kEval);
  return out.prediction.logits.value();
}

SampleResult sample(Denoiser& denoiser, const LabelCodec& codec, const NoiseSchedule& schedule,
                    const TimeGrid& grid, int height, int width, std::uint64_t seed,
                    const SamplerOptions& options) {
  if (grid.steps() < 1) throw ParameterError("time grid has no sampling steps");
  if (grid.times.front() != schedule.total_steps()) {
    throw ParameterError("time grid must start at T");
  }
  if (height < 1 || width < 1) throw ShapeError("sample extent must be positive");

  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  Tensor z(Shape{codec.latent_channels(), 1, height, width});
  for (float& v : z.storage()) v = normal(rng);

  SampleResult result;
  const int S = grid.steps();
  for (int i = 0; i < S; ++i) {
    const int t = grid.times[i];
    Tensor logits = denoiser.predict_logits(z, t);
    ++result.evaluations;
    if (!logits.all_finite()) {
      throw NumericError("denoiser produced non-finite logits at t=" + std::to_string(t));
    }
    const bool last = i + 1 == S;
    const int t_next = last ? -1 : grid.renoise_target(i);
    double abs_sum = 0.0;
    for (float v : z.values()) abs_sum += std::abs(v);
    TraceStep record{t, t_next, abs_sum / static_cast<double>(z.size()), {}};
    if (options.trace) record.prediction = ops::argmax_channels(logits);
    result.trace.push_back(std::move(record));
    if (last) {
      result.prediction.height = height;
      result.prediction.width = width;
      result.prediction.num_classes = codec.num_classes();
      result.prediction.indices = ops::argmax_channels(logits);
      result.prediction.source = LabelSource::kPseudo;
      result.logits = std::move(logits);
      break;
    }
    const LabelLatent clean = codec.reencode_prediction(logits, options.reencode);
    z = ddim_step(z, clean.values, t, t_next, schedule);
  }
  return result;
}

SampleResult sample_image(const SegDiffusionModel& model, const Tensor& image,
                          const NoiseSchedule& schedule, const TimeGrid& grid, std::uint64_t seed,
                          const SamplerOptions& options) {
  if (!model.store().all_finite()) throw StateError("model weights contain non-finite values");
  ModelDenoiser denoiser(model, image);
  return sample(denoiser, model.codec(), schedule, grid, image.shape().height,
                image.shape().width, seed, options);
}

std::vector<InferenceRecord> batch_infer(const SegDiffusionModel& model,
                                         std::span<const InferenceInput> inputs,
                                         const NoiseSchedule& schedule, const TimeGrid& grid,
                                         std::uint64_t seed, const SamplerOptions& options,
                                         bool stop_on_error) {
  if (!model.store().all_finite()) throw StateError("model weights contain non-finite values");
  std::vector<InferenceRecord> records;
  records.reserve(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    InferenceRecord rec;
    rec.name = inputs[i].name;
    const auto start = std::chrono::steady_clock::now();
    try {
      rec.result = sample_image(model, inputs[i].image, schedule, grid, derive_seed(seed, 20, i),
                                options);
    } catch (const Error& e) {
      if (stop_on_error) throw;
      rec.error = e.what();
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    records.push_back(std::move(rec));
  }
  return records;
}

EvaluationReport evaluate(const SegDiffusionModel& model, std::span<const SegSample> samples,
                          const NoiseSchedule& schedule, const TimeGrid& grid, std::uint64_t seed,
                          const SamplerOptions& options) {
  std::vector<InferenceInput> inputs;
  inputs.reserve(samples.size());
  for (const SegSample& s : samples) inputs.push_back({s.name, s.image});
  const auto records = batch_infer(model, inputs, schedule, grid, seed, options, true);

  EvaluationReport report;
  ConfusionMatrix matrix(model.num_classes());
  double seconds = 0.0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    matrix.add(records[i].result->prediction, samples[i].label);
    report.predictions.push_back(records[i].result->prediction);
    seconds += records[i].seconds;
  }
  report.miou = miou(matrix);
  if (!records.empty()) report.seconds_per_image = seconds / static_cast<double>(records.size());
  return report;
}

}  // namespace protodiff
