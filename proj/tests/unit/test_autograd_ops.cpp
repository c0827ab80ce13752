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
#include <functional>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "protodiff/autograd.hpp"
#include "protodiff/errors.hpp"
#include "protodiff/ops.hpp"
#include "test_support.hpp"

namespace protodiff {
namespace {

using testing::random_tensor;
using Fn = std::function<ag::Var(const std::vector<ag::Var>&)>;

// Projects the op output onto fixed random weights and compares the
// autograd gradient of every input with central differences.
void expect_gradients(const Fn& fn, std::vector<Tensor> inputs, std::uint64_t seed,
                      double tol = 2e-2, float h = 1e-2f) {
  std::vector<ag::Var> leaves;
  for (Tensor& t : inputs) leaves.push_back(ag::Var::leaf(t));
  const ag::Var out = fn(leaves);
  std::mt19937_64 rng(seed);
  const Tensor proj = random_tensor(out.shape(), rng);

  auto loss_of = [&](const std::vector<ag::Var>& in) {
    const ag::Var o = fn(in);
    double s = 0.0;
    for (std::size_t i = 0; i < o.value().size(); ++i) s += double(o.value().data()[i]) * proj.data()[i];
    return s;
  };

  ag::Var weighted = ag::make_result(Tensor(Shape{1, 1, 1, 1}), {out}, [proj, out](ag::Node& n) {
    Tensor& g = out.node()->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] += n.grad.data()[0] * proj.data()[i];
  });
  ag::backward(weighted);

  for (std::size_t k = 0; k < leaves.size(); ++k) {
    const Tensor analytic = leaves[k].grad();
    ASSERT_EQ(analytic.size(), inputs[k].size()) << "input " << k << " got no gradient";
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      std::vector<ag::Var> plus;
      std::vector<ag::Var> minus;
      for (std::size_t j = 0; j < inputs.size(); ++j) {
        Tensor p = inputs[j];
        Tensor m = inputs[j];
        if (j == k) {
          p.data()[i] += h;
          m.data()[i] -= h;
        }
        plus.push_back(ag::Var::constant(p));
        minus.push_back(ag::Var::constant(m));
      }
      const double fd = (loss_of(plus) - loss_of(minus)) / (2.0 * h);
      num += (fd - analytic.data()[i]) * (fd - analytic.data()[i]);
      den += fd * fd;
    }
    EXPECT_LE(std::sqrt(num), tol * std::sqrt(den) + 1e-4) << "input " << k;
  }
}

TEST(Autograd, ConvGradients) {
  std::mt19937_64 rng(1);
  for (int stride : {1, 2}) {
    for (int k : {1, 3}) {
      expect_gradients(
          [&](const std::vector<ag::Var>& in) { return ops::conv2d(in[0], in[1], in[2], stride, k / 2); },
          {random_tensor({3, 2, 6, 6}, rng), random_tensor({4, 3, k, k}, rng, 0.5f),
           random_tensor({4, 1, 1, 1}, rng)},
          11 + k + stride);
    }
  }
}

TEST(Autograd, BatchNormGradients) {
  std::mt19937_64 rng(2);
  Tensor mean(Shape{3, 1, 1, 1});
  Tensor var(Shape{3, 1, 1, 1}, 1.0f);
  expect_gradients(
      [&](const std::vector<ag::Var>& in) {
        return ops::batch_norm(in[0], in[1], in[2], mean, var, true);
      },
      {random_tensor({3, 2, 3, 3}, rng), random_tensor({3, 1, 1, 1}, rng),
       random_tensor({3, 1, 1, 1}, rng)},
      21);
}

TEST(Autograd, PointwiseGradients) {
  std::mt19937_64 rng(3);
  expect_gradients([](const auto& in) { return ops::gelu(in[0]); }, {random_tensor({2, 2, 3, 3}, rng)}, 31);
  expect_gradients([](const auto& in) { return ops::sigmoid(in[0]); }, {random_tensor({2, 2, 3, 3}, rng)}, 32);
  expect_gradients([](const auto& in) { return ops::add(in[0], in[1]); },
                   {random_tensor({2, 2, 3, 3}, rng), random_tensor({2, 2, 3, 3}, rng)}, 33);
  const std::vector<float> f{0.5f, -2.0f};
  expect_gradients([&](const auto& in) { return ops::scale_per_sample(in[0], f); },
                   {random_tensor({2, 2, 3, 3}, rng)}, 34);
  expect_gradients([](const auto& in) { return ops::add_hw_broadcast(in[0], in[1]); },
                   {random_tensor({2, 2, 3, 3}, rng), random_tensor({2, 2, 1, 1}, rng)}, 35);
  expect_gradients([](const auto& in) { return ops::mul_mask(in[0], in[1]); },
                   {random_tensor({1, 2, 3, 3}, rng), random_tensor({3, 2, 3, 3}, rng)}, 36);
  expect_gradients(
      [](const auto& in) { return ops::concat_channels(std::vector<ag::Var>{in[0], in[1]}); },
      {random_tensor({2, 2, 3, 3}, rng), random_tensor({1, 2, 3, 3}, rng)}, 37);
}

TEST(Autograd, ResizeAndNormalizeGradients) {
  std::mt19937_64 rng(4);
  expect_gradients([](const auto& in) { return ops::resize_bilinear(in[0], 7, 5); },
                   {random_tensor({2, 2, 4, 4}, rng)}, 41);
  expect_gradients([](const auto& in) { return ops::resize_bilinear(in[0], 2, 3); },
                   {random_tensor({2, 1, 6, 6}, rng)}, 42);
  expect_gradients([](const auto& in) { return ops::l2_normalize_channels(in[0]); },
                   {random_tensor({4, 2, 3, 3}, rng)}, 43);
  expect_gradients([](const auto& in) { return ops::minmax_scale_per_sample(in[0], 0.5f); },
                   {random_tensor({2, 2, 3, 3}, rng)}, 44);
}

TEST(Autograd, CrossEntropyGradientAndValue) {
  std::mt19937_64 rng(5);
  const Tensor logits = random_tensor({3, 2, 2, 2}, rng);
  const std::vector<int> labels{0, 1, 2, 1, 2, 2, 0, 1};
  const std::vector<float> w{1.0f, 0.25f};
  expect_gradients([&](const auto& in) { return ops::cross_entropy(in[0], labels, w); }, {logits}, 51);

  // Scalar oracle: mean over pixels of w_b * -log softmax.
  double expected = 0.0;
  for (int b = 0; b < 2; ++b) {
    for (int p = 0; p < 4; ++p) {
      const int y = p / 2;
      const int x = p % 2;
      double z = 0.0;
      for (int c = 0; c < 3; ++c) z += std::exp(double(logits.at(c, b, y, x)));
      const int lab = labels[b * 4 + p];
      expected += w[b] * -(logits.at(lab, b, y, x) - std::log(z));
    }
  }
  expected /= 8.0;
  EXPECT_NEAR(ops::cross_entropy(ag::Var::constant(logits), labels, w).item(), expected, 1e-6);
}

TEST(Autograd, WeightedSumAndGuard) {
  ag::Var a = ag::Var::leaf(Tensor(Shape{1, 1, 1, 1}, 2.0f));
  ag::Var b = ag::Var::leaf(Tensor(Shape{1, 1, 1, 1}, 3.0f));
  const std::vector<float> w{0.5f, 4.0f};
  const ag::Var s = ops::weighted_sum(std::vector<ag::Var>{a, b}, w);
  EXPECT_FLOAT_EQ(s.item(), 13.0f);
  ag::backward(s);
  EXPECT_FLOAT_EQ(a.grad().data()[0], 0.5f);
  EXPECT_FLOAT_EQ(b.grad().data()[0], 4.0f);
  {
    ag::NoGradGuard guard;
    const ag::Var t = ops::add(a, b);
    EXPECT_FALSE(t.requires_grad());
  }
  EXPECT_TRUE(ag::grad_enabled());
}

TEST(Ops, BilinearIdentityAndConstant) {
  std::mt19937_64 rng(6);
  const Tensor x = random_tensor({2, 1, 5, 4}, rng);
  EXPECT_EQ(max_abs_diff(ops::resize_bilinear(x, 5, 4), x), 0.0f);
  const Tensor c(Shape{1, 1, 3, 3}, 0.7f);
  const Tensor up = ops::resize_bilinear(c, 9, 7);
  for (float v : up.values()) EXPECT_NEAR(v, 0.7f, 1e-6);
}

TEST(Ops, ArgmaxTiesAndNearestLabels) {
  const Tensor logits(Shape{3, 1, 1, 2}, std::vector<float>{1, 0, 1, 5, 1, 5});
  const auto idx = ops::argmax_channels(logits);
  EXPECT_EQ(idx[0], 0);
  EXPECT_EQ(idx[1], 1);
  const std::vector<int> labels{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15};
  const auto down = ops::resize_nearest_labels(labels, 1, 4, 4, 2, 2);
  EXPECT_EQ(down, (std::vector<int>{5, 7, 13, 15}));
}

TEST(Ops, ShapeErrors) {
  const ag::Var a = ag::Var::constant(Tensor(Shape{1, 1, 2, 2}));
  const ag::Var b = ag::Var::constant(Tensor(Shape{1, 1, 3, 2}));
  EXPECT_THROW((void)ops::add(a, b), ShapeError);
  const ag::Var w = ag::Var::constant(Tensor(Shape{2, 3, 3, 3}));
  EXPECT_THROW((void)ops::conv2d(a, w, {}, 1, 1), ShapeError);
}

}  // namespace
}  // namespace protodiff
