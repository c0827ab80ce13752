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
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "protodiff/errors.hpp"
#include "protodiff/ops.hpp"
#include "protodiff/prototype_bank.hpp"
#include "test_support.hpp"

namespace protodiff {
namespace {

using testing::dot;
using testing::random_unit;

// Naive evaluation straight from the definition, in long double.
long double reference_inter(const std::vector<double>& i, const PrototypeBank& bank, int c, int k) {
  const long double tau = bank.tau();
  const long double pos = std::exp(static_cast<long double>(dot(i, bank.prototype(c, k))) / tau);
  long double neg = 0.0L;
  for (int o = 0; o < bank.num_classes(); ++o) {
    if (o == c) continue;
    for (int j = 0; j < bank.per_class(); ++j) {
      neg += std::exp(static_cast<long double>(dot(i, bank.prototype(o, j))) / tau);
    }
  }
  return -std::log(pos / (pos + neg));
}

TEST(Projector, UnitNormAndScaleInvariance) {
  ParameterStore store(1);
  const LatentProjector proj(store, 6, 4);
  std::mt19937_64 rng(2);
  const Tensor x = testing::random_tensor({6, 2, 5, 5}, rng);
  const Tensor y = proj.project(x);
  for (int b = 0; b < 2; ++b)
    for (int r = 0; r < 5; ++r)
      for (int c = 0; c < 5; ++c) {
        double n = 0.0;
        for (int d = 0; d < 4; ++d) n += double(y.at(d, b, r, c)) * y.at(d, b, r, c);
        EXPECT_NEAR(std::sqrt(n), 1.0, 1e-6);
      }
  Tensor x5 = x;
  for (float& v : x5.storage()) v *= 5.0f;
  EXPECT_LT(max_abs_diff(proj.project(x5), y), 1e-6f);
}

TEST(Projector, MatchesStraightLine) {
  ParameterStore store(3);
  const LatentProjector proj(store, 5, 3);
  std::mt19937_64 rng(4);
  const Tensor x = testing::random_tensor({5, 1, 4, 4}, rng);
  testing::Field f = testing::ref_conv(testing::Field(x), proj.conv().weight.value(), nullptr, 1, 0);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) {
      double n = 0.0;
      for (int d = 0; d < 3; ++d) n += f.at(d, 0, r, c) * f.at(d, 0, r, c);
      for (int d = 0; d < 3; ++d) f.at(d, 0, r, c) /= std::sqrt(n);
    }
  EXPECT_LT(testing::max_abs_diff(f, proj.project(x)), 1e-6);
}

TEST(Projector, ZeroPixelMapsToBasisVector) {
  ParameterStore store(5);
  const LatentProjector proj(store, 3, 4);
  int zeros = -1;
  const Tensor y = proj.project(Tensor(Shape{3, 1, 2, 2}), &zeros);
  EXPECT_EQ(zeros, 4);
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c) {
      EXPECT_EQ(y.at(0, 0, r, c), 1.0f);
      for (int d = 1; d < 4; ++d) EXPECT_EQ(y.at(d, 0, r, c), 0.0f);
    }
}

TEST(Bank, ConstructionAndValidation) {
  const PrototypeBank bank(3, 4, 8, 0.1, 0.999, 7);
  for (int c = 0; c < 3; ++c)
    for (int k = 0; k < 4; ++k) {
      const auto p = bank.prototype(c, k);
      double n = 0.0;
      for (double v : p) n += v * v;
      EXPECT_NEAR(n, 1.0, 1e-12);
    }
  EXPECT_THROW(PrototypeBank(1, 2, 4, 0.1, 0.9, 0), ParameterError);
  EXPECT_THROW(PrototypeBank(2, 0, 4, 0.1, 0.9, 0), ParameterError);
  EXPECT_THROW(PrototypeBank(2, 2, 4, 0.0, 0.9, 0), ParameterError);
  EXPECT_THROW(PrototypeBank(2, 2, 4, -1.0, 0.9, 0), ParameterError);
  EXPECT_THROW(PrototypeBank(2, 2, 4, 0.1, 1.0, 0), ParameterError);
  EXPECT_THROW(PrototypeBank(2, 2, 4, 0.1, -0.1, 0), ParameterError);
}

TEST(Assign, SingleSlotAndExactMatch) {
  std::mt19937_64 rng(8);
  const PrototypeBank one(3, 1, 4, 0.1, 0.9, 1);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(one.assign(random_unit(4, rng), 1), 0);

  // Five orthonormal prototypes per class: the standard basis.
  std::vector<double> v(2 * 5 * 5, 0.0);
  for (int c = 0; c < 2; ++c)
    for (int k = 0; k < 5; ++k) v[(c * 5 + k) * 5 + k] = 1.0;
  const PrototypeBank ortho(2, 5, 5, 0.1, 0.9, v);
  const auto p3 = ortho.prototype(0, 3);
  EXPECT_EQ(ortho.assign(std::vector<double>(p3.begin(), p3.end()), 0), 3);
  // Exact tie between slots 1 and 2 goes to 1.
  const double h = std::sqrt(0.5);
  EXPECT_EQ(ortho.assign(std::vector<double>{0, h, h, 0, 0}, 1), 1);
}

TEST(Assign, MatchesExhaustiveScan) {
  std::mt19937_64 rng(9);
  const PrototypeBank bank(4, 10, 6, 0.1, 0.9, 10);
  for (int n = 0; n < 100; ++n) {
    const auto e = random_unit(6, rng);
    const int c = n % 4;
    int best = 0;
    for (int k = 1; k < 10; ++k) {
      if (dot(e, bank.prototype(c, k)) > dot(e, bank.prototype(c, best))) best = k;
    }
    EXPECT_EQ(bank.assign(e, c), best);
  }
}

TEST(InterLoss, EqualSimilaritiesGiveLogOnePlusNegatives) {
  // e orthogonal to every prototype: all six logits are 0.
  std::vector<double> v(3 * 2 * 4, 0.0);
  for (int n = 0; n < 6; ++n) {
    v[n * 4 + 1 + (n % 3)] = 1.0;
  }
  const PrototypeBank bank(3, 2, 4, 0.1, 0.9, v);
  const std::vector<double> e{1.0, 0.0, 0.0, 0.0};
  EXPECT_NEAR(inter_loss(e, bank, 0, 0), std::log(5.0), 1e-9);
  EXPECT_NEAR(inter_loss(e, bank, 2, 1), std::log(5.0), 1e-9);

  // Same value when every similarity equals a nonzero constant.
  std::mt19937_64 rng(11);
  const auto dir = random_unit(4, rng);
  std::vector<double> same;
  for (int n = 0; n < 6; ++n) same.insert(same.end(), dir.begin(), dir.end());
  const PrototypeBank flat(3, 2, 4, 0.05, 0.9, same);
  EXPECT_NEAR(inter_loss(random_unit(4, rng), flat, 1, 0), std::log(5.0), 1e-9);
}

TEST(InterLoss, SharpLimitAndPositivity) {
  const std::vector<double> v{1, 0, 0, 0, -1, 0, 0, 0};
  const std::vector<double> e{1, 0, 0, 0};
  const PrototypeBank sharp(2, 1, 4, 1e-3, 0.9, v);
  EXPECT_LT(inter_loss(e, sharp, 0, 0), 1e-12);
  EXPECT_GE(inter_loss(e, sharp, 0, 0), 0.0);
  std::mt19937_64 rng(12);
  const PrototypeBank bank(3, 4, 5, 0.5, 0.9, 13);
  for (int n = 0; n < 50; ++n) EXPECT_GT(inter_loss(random_unit(5, rng), bank, n % 3, n % 4), 0.0);
}

TEST(InterLoss, MatchesNaiveDefinition) {
  std::mt19937_64 rng(14);
  for (double tau : {0.05, 0.1, 0.5}) {
    const PrototypeBank bank(4, 3, 6, tau, 0.9, 15);
    for (int n = 0; n < 30; ++n) {
      const auto e = random_unit(6, rng);
      const int c = n % 4;
      const int k = bank.assign(e, c);
      EXPECT_NEAR(inter_loss(e, bank, c, k), static_cast<double>(reference_inter(e, bank, c, k)), 1e-10);
    }
  }
}

TEST(InterLoss, StableAtTinyTemperature) {
  std::mt19937_64 rng(16);
  const PrototypeBank bank(3, 5, 4, 1e-4, 0.9, 17);
  for (int n = 0; n < 20; ++n) EXPECT_TRUE(std::isfinite(inter_loss(random_unit(4, rng), bank, 0, 0)));
}

TEST(IntraLoss, Fixtures) {
  const std::vector<double> p{0.6, 0.8, 0.0};
  EXPECT_EQ(intra_loss(p, p), 0.0);
  EXPECT_EQ(intra_loss(std::vector<double>{0.0, 0.0, 1.0}, p), 1.0);
  EXPECT_EQ(intra_loss(std::vector<double>{-0.6, -0.8, 0.0}, p), 4.0);
}

double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-8);
}

TEST(Gradients, InterAndIntraMatchCentralDifferences) {
  std::mt19937_64 rng(18);
  constexpr double h = 1e-5;
  int configs = 0;
  for (double tau : {0.05, 0.1, 0.5}) {
    for (int trial = 0; trial < 40; ++trial) {
      const int C = 2 + static_cast<int>(rng() % 4);
      const int K = 1 + static_cast<int>(rng() % 10);
      const int D = 2 + static_cast<int>(rng() % 15);
      const PrototypeBank bank(C, K, D, tau, 0.9, rng());
      const auto e = random_unit(D, rng);
      const int c = static_cast<int>(rng() % C);
      const int k = bank.assign(e, c);

      std::vector<double> g_inter(D);
      std::vector<double> g_intra(D);
      inter_loss(e, bank, c, k, g_inter);
      intra_loss(e, bank.prototype(c, k), g_intra);
      std::vector<double> fd_inter(D);
      std::vector<double> fd_intra(D);
      for (int d = 0; d < D; ++d) {
        auto plus = e;
        auto minus = e;
        plus[d] += h;
        minus[d] -= h;
        fd_inter[d] = (inter_loss(plus, bank, c, k) - inter_loss(minus, bank, c, k)) / (2 * h);
        fd_intra[d] = (intra_loss(plus, bank.prototype(c, k)) - intra_loss(minus, bank.prototype(c, k))) / (2 * h);
      }
      EXPECT_LE(relative_error(g_inter, fd_inter), 1e-4) << "C=" << C << " K=" << K << " tau=" << tau;
      EXPECT_LE(relative_error(g_intra, fd_intra), 1e-4);
      ++configs;
    }
  }
  EXPECT_GE(configs, 100);
}

TEST(Update, UntouchedClassesAreBitwiseUnchanged) {
  PrototypeBank bank(3, 2, 4, 0.1, 0.9, 20);
  const std::vector<double> before(bank.data().begin(), bank.data().end());
  std::mt19937_64 rng(21);
  AssignedEmbeddings batch;
  batch.dim = 4;
  const auto e = random_unit(4, rng);
  batch.vectors = e;
  batch.classes = {1};
  batch.slots = {bank.assign(e, 1)};
  update_prototypes(bank, batch);
  for (int c : {0, 2})
    for (int k = 0; k < 2; ++k)
      for (int d = 0; d < 4; ++d) EXPECT_EQ(bank.prototype(c, k)[d], before[(c * 2 + k) * 4 + d]);
  const int other = 1 - batch.slots[0];
  for (int d = 0; d < 4; ++d) EXPECT_EQ(bank.prototype(1, other)[d], before[(2 + other) * 4 + d]);
}

TEST(Update, ZeroMomentumTakesTheEmbedding) {
  PrototypeBank bank(2, 3, 5, 0.1, 0.0, 22);
  std::mt19937_64 rng(23);
  const auto e = random_unit(5, rng);
  AssignedEmbeddings batch{5, e, {0}, {bank.assign(e, 0)}};
  update_prototypes(bank, batch);
  const auto p = bank.prototype(0, batch.slots[0]);
  for (int d = 0; d < 5; ++d) EXPECT_NEAR(p[d], e[d], 1e-15);
}

TEST(Update, MatchesMeanAndRenormalizeOracle) {
  PrototypeBank bank(3, 4, 6, 0.1, 0.999, 24);
  const PrototypeBank before = bank;
  std::mt19937_64 rng(25);
  AssignedEmbeddings batch;
  batch.dim = 6;
  for (int n = 0; n < 200; ++n) {
    const auto e = random_unit(6, rng);
    const int c = n % 3;
    batch.vectors.insert(batch.vectors.end(), e.begin(), e.end());
    batch.classes.push_back(c);
    batch.slots.push_back(before.assign(e, c));
  }
  update_prototypes(bank, batch);
  for (int c = 0; c < 3; ++c) {
    for (int k = 0; k < 4; ++k) {
      std::vector<double> mean(6, 0.0);
      int count = 0;
      for (std::size_t n = 0; n < batch.size(); ++n) {
        if (batch.classes[n] != c || batch.slots[n] != k) continue;
        for (int d = 0; d < 6; ++d) mean[d] += batch.vector(n)[d];
        ++count;
      }
      const auto old = before.prototype(c, k);
      std::vector<double> expect(old.begin(), old.end());
      if (count > 0) {
        double norm = 0.0;
        for (int d = 0; d < 6; ++d) {
          expect[d] = 0.999 * old[d] + 0.001 * mean[d] / count;
          norm += expect[d] * expect[d];
        }
        for (double& x : expect) x /= std::sqrt(norm);
      }
      for (int d = 0; d < 6; ++d) EXPECT_NEAR(bank.prototype(c, k)[d], expect[d], 1e-14);
    }
  }
}

TEST(Update, UnitNormAfterManySteps) {
  PrototypeBank bank(3, 5, 8, 0.1, 0.9, 26);
  std::mt19937_64 rng(27);
  for (int step = 0; step < 1000; ++step) {
    AssignedEmbeddings batch;
    batch.dim = 8;
    for (int n = 0; n < 6; ++n) {
      const auto e = random_unit(8, rng);
      const int c = static_cast<int>(rng() % 3);
      batch.vectors.insert(batch.vectors.end(), e.begin(), e.end());
      batch.classes.push_back(c);
      batch.slots.push_back(bank.assign(e, c));
    }
    update_prototypes(bank, batch);
  }
  for (int c = 0; c < 3; ++c)
    for (int k = 0; k < 5; ++k) {
      double n = 0.0;
      for (double v : bank.prototype(c, k)) n += v * v;
      EXPECT_NEAR(std::sqrt(n), 1.0, 1e-6);
    }
}

TEST(SelectPixels, BoundsAndExclusion) {
  std::mt19937_64 rng(28);
  const auto all = select_pixels(3, 4, 4, 100, {true, true, true}, rng);
  EXPECT_EQ(all.size(), 48u);
  const auto some = select_pixels(3, 4, 4, 5, {true, false, true}, rng);
  EXPECT_EQ(some.size(), 10u);
  for (std::size_t p : some) EXPECT_NE(p / 16, 1u);
  for (std::size_t i = 1; i < some.size(); ++i) EXPECT_LT(some[i - 1], some[i]);
  std::mt19937_64 a(29);
  std::mt19937_64 b(29);
  EXPECT_EQ(select_pixels(2, 8, 8, 7, {true, true}, a), select_pixels(2, 8, 8, 7, {true, true}, b));
}

TEST(ContrastiveLosses, MeanOfPerPixelLossesAndGradient) {
  std::mt19937_64 rng(30);
  const PrototypeBank bank(3, 2, 4, 0.2, 0.9, 31);
  ParameterStore store(32);
  const LatentProjector proj(store, 5, 4);
  const Tensor x = testing::random_tensor({5, 2, 3, 3}, rng);
  std::vector<int> labels(18);
  for (int& l : labels) l = static_cast<int>(rng() % 3);
  const std::vector<std::size_t> pixels{0, 4, 8, 9, 13, 17};

  ag::Var leaf = ag::Var::leaf(x);
  const ag::Var emb = proj.project(leaf);
  const ContrastiveTerms terms = contrastive_losses(emb, labels, pixels, bank);
  ASSERT_EQ(terms.assigned.size(), pixels.size());

  auto scalar_losses = [&](const Tensor& e) {
    double inter = 0.0;
    double intra = 0.0;
    for (std::size_t p : pixels) {
      const int b = static_cast<int>(p / 9);
      const int yx = static_cast<int>(p % 9);
      std::vector<double> v(4);
      for (int d = 0; d < 4; ++d) v[d] = e.at(d, b, yx / 3, yx % 3);
      const int c = labels[p];
      const int k = bank.assign(v, c);
      inter += inter_loss(v, bank, c, k);
      intra += intra_loss(v, bank.prototype(c, k));
    }
    return std::pair{inter / pixels.size(), intra / pixels.size()};
  };
  const auto [inter, intra] = scalar_losses(emb.value());
  EXPECT_NEAR(terms.inter.item(), inter, 1e-5);
  EXPECT_NEAR(terms.intra.item(), intra, 1e-5);

  // Through the projector: d(inter + intra)/dx against float differences.
  const std::vector<float> ones{1.0f, 1.0f};
  ag::backward(ops::weighted_sum(std::vector<ag::Var>{terms.inter, terms.intra}, ones));
  const Tensor analytic = leaf.grad();
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor p = x;
    Tensor m = x;
    p.data()[i] += 1e-2f;
    m.data()[i] -= 1e-2f;
    const auto lp = scalar_losses(proj.project(p));
    const auto lm = scalar_losses(proj.project(m));
    const double fd = ((lp.first + lp.second) - (lm.first + lm.second)) / 2e-2;
    num += (fd - analytic.data()[i]) * (fd - analytic.data()[i]);
    den += fd * fd;
  }
  EXPECT_LE(std::sqrt(num), 3e-2 * std::sqrt(den) + 1e-4);
}

}  // namespace
}  // namespace protodiff
