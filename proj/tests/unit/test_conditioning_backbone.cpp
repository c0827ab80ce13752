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


#include <cmath>
#include <cstdio>
#include <map>
#include <random>

#include <gtest/gtest.h>

#include "protodiff/conditioning_backbone.hpp"
#include "protodiff/errors.hpp"
#include "protodiff/ops.hpp"
#include "protodiff/training_engine.hpp"
#include "test_support.hpp"

namespace protodiff {
namespace {

using testing::Field;

Tensor pattern_image(int b, int h, int w) {
  Tensor t(Shape{3, b, h, w});
  for (int c = 0; c < 3; ++c)
    for (int n = 0; n < b; ++n)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) t.at(c, n, y, x) = std::sin(0.3f * x + 0.2f * y + c + n);
  return t;
}

TEST(Backbone, ShapeContract) {
  ParameterStore store(1);
  BackboneConfig cfg{"rescnn", 16, 4, 4};
  const ConditioningBackbone bb(store, cfg, 3, 3);
  const BackboneFeatures f = bb.extract(ag::Var::constant(pattern_image(2, 64, 64)), Mode::kEval);
  ASSERT_EQ(f.levels.size(), 4u);
  EXPECT_EQ(f.layer_indices, (std::vector<int>{1, 2, 3, 4}));
  for (const ag::Var& x : f.levels) EXPECT_EQ(x.shape(), (Shape{16, 2, 16, 16}));
  const ConditionSet cs = bb.condition(f, Mode::kEval);
  ASSERT_EQ(cs.features.size(), 4u);
  for (int l = 0; l < 4; ++l) {
    EXPECT_EQ(cs.features[l].shape(), (Shape{16, 2, 16, 16}));
    EXPECT_EQ(cs.aux_logits[l].shape(), (Shape{3, 2, 16, 16}));
  }
}

TEST(Backbone, DeterministicOnIdenticalImages) {
  ParameterStore store(2);
  const ConditioningBackbone bb(store, {"rescnn", 8, 2, 2}, 3, 3);
  const Tensor img = pattern_image(1, 16, 16);
  const auto a = bb.extract(ag::Var::constant(img), Mode::kEval);
  const auto b = bb.extract(ag::Var::constant(img), Mode::kEval);
  for (int l = 0; l < 2; ++l) EXPECT_EQ(max_abs_diff(a.levels[l].value(), b.levels[l].value()), 0.0f);
}

TEST(Backbone, GoldenChecksum) {
  // Frozen from the first verified run of this exact configuration.
  constexpr double kSum = 48.50205909;
  constexpr double kAbsSum = 63.19614051;
  ParameterStore store(42);
  const ConditioningBackbone bb(store, {"rescnn", 8, 2, 4}, 3, 3);
  const auto f = bb.extract(ag::Var::constant(pattern_image(1, 16, 16)), Mode::kEval);
  double sum = 0.0;
  double abs_sum = 0.0;
  for (const ag::Var& x : f.levels) {
    for (float v : x.value().values()) {
      sum += v;
      abs_sum += std::abs(v);
    }
  }
  std::printf("checksum sum=%.10g abs=%.10g\n", sum, abs_sum);
  EXPECT_NEAR(sum, kSum, 1e-3 * std::max(1.0, std::abs(kSum)));
  EXPECT_NEAR(abs_sum, kAbsSum, 1e-3 * std::max(1.0, kAbsSum));
}

TEST(Backbone, RejectsBadImageSizes) {
  ParameterStore store(3);
  const ConditioningBackbone bb(store, {"rescnn", 8, 2, 4}, 3, 3);
  EXPECT_THROW((void)bb.extract(ag::Var::constant(pattern_image(1, 2, 2)), Mode::kEval), ShapeError);
  EXPECT_THROW((void)bb.extract(ag::Var::constant(pattern_image(1, 18, 16)), Mode::kEval), ShapeError);
  ParameterStore s2(3);
  EXPECT_THROW(ConditioningBackbone(s2, {"vit", 8, 2, 4}, 3, 3), ParameterError);
  EXPECT_THROW(ConditioningBackbone(s2, {"rescnn", 8, 1, 4}, 3, 3), ParameterError);
  EXPECT_THROW(ConditioningBackbone(s2, {"rescnn", 8, 2, 3}, 3, 3), ParameterError);
}

TEST(SpecificBranch, ZeroInputZeroAffineGivesZero) {
  ParameterStore store(4);
  const ConditioningBackbone bb(store, {"rescnn", 6, 2, 2}, 3, 3);
  for (const auto& [name, var] : store.parameters()) {
    if (name.rfind("branch", 0) == 0) {
      ag::Var v = var;
      v.mutable_value().fill(0.0f);
    }
  }
  const ag::Var out = bb.specific_branch(1, ag::Var::constant(Tensor(Shape{6, 2, 5, 5})), Mode::kTrain);
  EXPECT_EQ(out.shape(), (Shape{6, 2, 5, 5}));
  EXPECT_EQ(out.value().max_abs(), 0.0f);
}

TEST(SpecificBranch, MatchesStraightLine) {
  ParameterStore store(5);
  const ConditioningBackbone bb(store, {"rescnn", 5, 2, 2}, 3, 3);
  std::mt19937_64 rng(6);
  testing::randomize_store(store, rng);
  const Tensor x = testing::random_tensor({5, 2, 4, 4}, rng);
  for (bool training : {true, false}) {
    Field ref = testing::ref_conv_block(Field(x), store, "branch1.block0", training);
    ref = testing::ref_conv_block(ref, store, "branch1.block1", training);
    const Mode mode = training ? Mode::kTrain : Mode::kEval;
    EXPECT_LT(testing::max_abs_diff(ref, bb.specific_branch(1, ag::Var::constant(x), mode).value()), 1e-4);
  }
}

TEST(AuxHead, ShapeDeterminismAndCrossEntropyOracle) {
  ParameterStore store(7);
  const ConditioningBackbone bb(store, {"rescnn", 6, 2, 2}, 3, 4);
  std::mt19937_64 rng(8);
  testing::randomize_store(store, rng);
  const Tensor f = testing::random_tensor({6, 2, 3, 3}, rng);
  const ag::Var a = bb.aux_predict(0, ag::Var::constant(f));
  const ag::Var b = bb.aux_predict(0, ag::Var::constant(f));
  EXPECT_EQ(a.shape(), (Shape{4, 2, 3, 3}));
  EXPECT_EQ(max_abs_diff(a.value(), b.value()), 0.0f);

  // Full-resolution labels downsampled by nearest neighbour to the grid.
  std::vector<int> full(2 * 6 * 6);
  for (int& l : full) l = static_cast<int>(rng() % 4);
  const auto grid = ops::resize_nearest_labels(full, 2, 6, 6, 3, 3);
  for (int n = 0; n < 2; ++n)
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 3; ++x) EXPECT_EQ(grid[(n * 3 + y) * 3 + x], full[(n * 6 + 2 * y + 1) * 6 + 2 * x + 1]);

  const std::vector<float> w{1.0f, 1.0f};
  double expected = 0.0;
  for (int n = 0; n < 2; ++n)
    for (int p = 0; p < 9; ++p) {
      double z = 0.0;
      for (int c = 0; c < 4; ++c) z += std::exp(double(a.value().at(c, n, p / 3, p % 3)));
      expected -= a.value().at(grid[n * 9 + p], n, p / 3, p % 3) - std::log(z);
    }
  expected /= 18.0;
  EXPECT_NEAR(ops::cross_entropy(a, grid, w).item(), expected, 1e-6);
}

TEST(Backbone, BranchesReceiveGradientFromSegmentationLoss) {
  // Only the final CE term and no weight decay: any change must come from
  // the gradient through the aggregated condition.
  Config cfg = testing::tiny_config();
  cfg.train.lambda_aux = 0.0;
  cfg.train.lambda_inter = 0.0;
  cfg.train.lambda_intra = 0.0;
  cfg.train.weight_decay = 0.0;
  auto gt = testing::synthetic_pool(4, 16, 1, LabelSource::kGroundTruth);
  auto pseudo = testing::synthetic_pool(4, 16, 2, LabelSource::kPseudo);
  TrainingEngine engine(cfg, gt, pseudo);
  std::map<std::string, Tensor> before;
  for (const auto& [name, var] : engine.model().store().parameters()) before[name] = var.value();
  const LossBreakdown l = engine.step();
  ASSERT_GT(l.total, 0.0);
  for (int level = 0; level < cfg.backbone.levels; ++level) {
    const std::string prefix = "branch" + std::to_string(level) + ".";
    bool changed = false;
    for (const auto& [name, var] : engine.model().store().parameters()) {
      if (name.rfind(prefix, 0) == 0 && max_abs_diff(var.value(), before[name]) > 0.0f) changed = true;
    }
    EXPECT_TRUE(changed) << prefix;
  }
}

}  // namespace
}  // namespace protodiff
