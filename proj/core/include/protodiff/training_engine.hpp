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
#include <filesystem>
#include <functional>
#include <memory>
#include <ostream>
#include <random>
#include <span>
#include <vector>

#include "protodiff/checkpoint.hpp"
#include "protodiff/config.hpp"
#include "protodiff/dataset.hpp"
#include "protodiff/model.hpp"
#include "protodiff/noise_schedule.hpp"
#include "protodiff/prototype_bank.hpp"

namespace protodiff {

struct LossBreakdown {
  double ce = 0.0;
  double aux = 0.0;    // mean over levels
  double inter = 0.0;
  double intra = 0.0;
  double total = 0.0;
};

// total = ce + lambda_aux * mean(aux) + lambda_inter * inter + lambda_intra * intra
LossBreakdown compose_loss(double ce, std::span<const double> aux_per_level, double inter,
                           double intra, const TrainConfig& config);

// round(ratio * batch) draws from the GT pool and the rest from the pseudo
// pool, each uniform with replacement. A pool that must contribute but is
// empty is a DataError.
std::vector<const SegSample*> build_batch(std::span<const SegSample> gt_pool,
                                          std::span<const SegSample> pseudo_pool, int batch_size,
                                          double gt_ratio, std::mt19937_64& rng);

// lr0 * (1 - it / iterations)^power, clamped at zero.
double poly_learning_rate(const TrainConfig& config, int iteration);

// Adam with coupled L2 weight decay, one moment pair per parameter.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(const ParameterStore& store);
  void step(ParameterStore& store, double lr, const TrainConfig& config);

  [[nodiscard]] std::vector<Tensor>& first_moments() { return m_; }
  [[nodiscard]] std::vector<Tensor>& second_moments() { return v_; }
  [[nodiscard]] std::uint64_t steps() const { return steps_; }
  void set_steps(std::uint64_t steps) { steps_ = steps; }

 private:
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::uint64_t steps_ = 0;
};

// Owns model, prototypes, optimizer and RNG; one call to `step` is one
// iteration of the semi-supervised training loop.
class TrainingEngine {
 public:
  TrainingEngine(const Config& config, std::vector<SegSample> gt_pool,
                 std::vector<SegSample> pseudo_pool);

  // Samples a batch and runs `train_step` on it.
  LossBreakdown step();
  // Forward, loss, backward, optimizer update and prototype update on a given
  // batch. Throws NumericError (naming the batch) if the loss is not finite.
  LossBreakdown train_step(std::span<const SegSample* const> batch);

  // Runs until `config.train.iterations`; writes one JSON line per logged
  // iteration. `on_checkpoint` fires every checkpoint_every iterations.
  void train(std::ostream* log = nullptr,
             const std::function<void(const TrainingEngine&)>& on_checkpoint = {});

  [[nodiscard]] int iteration() const { return iteration_; }
  [[nodiscard]] const Config& config() const { return config_; }
  [[nodiscard]] const NoiseSchedule& schedule() const { return schedule_; }
  [[nodiscard]] SegDiffusionModel& model() { return *model_; }
  [[nodiscard]] const SegDiffusionModel& model() const { return *model_; }
  [[nodiscard]] PrototypeBank& bank() { return bank_; }
  [[nodiscard]] const PrototypeBank& bank() const { return bank_; }

  [[nodiscard]] CheckpointData snapshot() const;
  void restore(const CheckpointData& data);
  void save_checkpoint(const std::filesystem::path& path) const;
  void load_checkpoint(const std::filesystem::path& path);

 private:
  Config config_;
  NoiseSchedule schedule_;
  std::vector<SegSample> gt_pool_;
  std::vector<SegSample> pseudo_pool_;
  std::unique_ptr<SegDiffusionModel> model_;
  PrototypeBank bank_;
  AdamOptimizer optimizer_;
  std::mt19937_64 rng_;
  int iteration_ = 0;
};

// Seeds derived from train.seed for the model weights, prototypes and the
// training stream.
std::uint64_t model_seed(const Config& config);
std::uint64_t prototype_seed(const Config& config);
std::uint64_t training_seed(const Config& config);

// Mean cosine similarity between projected pixel embeddings and their
// assigned prototypes over `samples`, with labels noised to time t. Runs in
// evaluation mode without touching model or bank.
double prototype_affinity(const SegDiffusionModel& model, const PrototypeBank& bank,
                          std::span<const SegSample> samples, const NoiseSchedule& schedule,
                          int t, std::uint64_t seed);

// Rebuilds a model (weights and batch-norm statistics) from a checkpoint;
// `config` receives the stored configuration.
std::unique_ptr<SegDiffusionModel> load_model(const CheckpointData& data, Config& config);

}  // namespace protodiff
