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


#include <random>

#include <benchmark/benchmark.h>

#include "protodiff/inference_sampler.hpp"
#include "protodiff/ops.hpp"
#include "protodiff/prototype_bank.hpp"
#include "protodiff/synthetic.hpp"
#include "protodiff/training_engine.hpp"

namespace {

using namespace protodiff;

Tensor noise(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> nd(0.0f, 1.0f);
  Tensor t(s);
  for (float& v : t.storage()) v = nd(rng);
  return t;
}

Config bench_config() {
  Config c;
  c.data.num_classes = 3;
  c.label.latent_channels = 8;
  c.backbone.channels = 24;
  c.backbone.levels = 3;
  c.backbone.stride = 4;
  c.decoder.blocks = 2;
  c.decoder.time_embed_dim = 32;
  c.proto.K = 10;
  c.proto.dim = 16;
  c.proto.max_pixels = 256;
  c.train.batch_size = 8;
  c.train.lr = 2e-3;
  return c;
}

std::vector<SegSample> bench_pool(int n, LabelSource source, std::uint64_t seed) {
  SyntheticConfig sc;
  sc.image_size = 64;
  std::vector<SegSample> pool;
  for (int i = 0; i < n; ++i) {
    const SyntheticSample s = generate_synthetic_sample(sc, derive_seed(seed, 5, i));
    SegSample out;
    out.name = std::to_string(i);
    out.rgb = s.image;
    out.image = image_to_tensor(s.image);
    out.label = source == LabelSource::kGroundTruth ? s.truth : s.pseudo;
    pool.push_back(std::move(out));
  }
  return pool;
}

void BM_Conv3x3(benchmark::State& state) {
  const int ch = static_cast<int>(state.range(0));
  const ag::Var x = ag::Var::constant(noise({ch, 8, 16, 16}, 1));
  const ag::Var w = ag::Var::constant(noise({ch, ch, 3, 3}, 2));
  for (auto _ : state) benchmark::DoNotOptimize(ops::conv2d(x, w, ag::Var(), 1, 1).value().data());
}
BENCHMARK(BM_Conv3x3)->Arg(16)->Arg(24)->Arg(48);

void BM_InterLoss(benchmark::State& state) {
  const PrototypeBank bank(3, static_cast<int>(state.range(0)), 16, 0.1, 0.999, 3);
  std::vector<double> e(16, 0.25);
  std::vector<double> g(16);
  for (auto _ : state) benchmark::DoNotOptimize(inter_loss(e, bank, 1, 0, g));
}
BENCHMARK(BM_InterLoss)->Arg(1)->Arg(10);

void BM_TrainStep(benchmark::State& state) {
  TrainingEngine engine(bench_config(), bench_pool(16, LabelSource::kGroundTruth, 1),
                        bench_pool(16, LabelSource::kPseudo, 2));
  for (auto _ : state) benchmark::DoNotOptimize(engine.step().total);
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

void BM_SampleImage(benchmark::State& state) {
  const Config cfg = bench_config();
  const SegDiffusionModel model(cfg, 4);
  const NoiseSchedule schedule(cfg.diffusion.T);
  const TimeGrid grid = make_time_grid(cfg.diffusion.T, static_cast<int>(state.range(0)), 1);
  const auto pool = bench_pool(1, LabelSource::kGroundTruth, 3);
  for (auto _ : state) {
    benchmark::DoNotOptimize(sample_image(model, pool[0].image, schedule, grid, 0).evaluations);
  }
}
BENCHMARK(BM_SampleImage)->Arg(1)->Arg(3)->Arg(10)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
