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
#include <random>
#include <span>
#include <vector>

#include "protodiff/autograd.hpp"
#include "protodiff/layers.hpp"

namespace protodiff {

// Latent projector phi: a bias-free 1x1 convolution D_ch -> D_proj followed
// by per-pixel l2 normalization, so every embedding lies on the unit sphere.
class LatentProjector {
 public:
  LatentProjector(ParameterStore& store, int in_channels, int out_channels);

  [[nodiscard]] ag::Var project(const ag::Var& features, int* zero_pixels = nullptr) const;
  [[nodiscard]] Tensor project(const Tensor& features, int* zero_pixels = nullptr) const;
  [[nodiscard]] const Conv2d& conv() const { return conv_; }
  [[nodiscard]] int out_channels() const { return conv_.out_channels(); }

 private:
  Conv2d conv_;
};

// C x K non-learnable unit prototypes with temperature tau and EMA momentum
// mu. Stored row-major as protos[(c * K + k) * D + d].
class PrototypeBank {
 public:
  // Prototypes start as seeded random unit vectors.
  PrototypeBank(int num_classes, int per_class, int dim, double tau, double momentum,
                std::uint64_t seed);
  // Takes explicit vectors (C * K * D values) and normalizes each to unit length.
  PrototypeBank(int num_classes, int per_class, int dim, double tau, double momentum,
                std::vector<double> vectors);

  [[nodiscard]] int num_classes() const { return num_classes_; }
  [[nodiscard]] int per_class() const { return per_class_; }
  [[nodiscard]] int dim() const { return dim_; }
  [[nodiscard]] double tau() const { return tau_; }
  [[nodiscard]] double momentum() const { return momentum_; }
  [[nodiscard]] std::span<const double> prototype(int c, int k) const;
  [[nodiscard]] std::span<const double> data() const { return protos_; }
  // Replaces all prototype values, e.g. when restoring a checkpoint.
  void set_data(std::span<const double> values);

  // argmax_k <i, p_{c,k}>, ties to the lowest k.
  [[nodiscard]] int assign(std::span<const double> embedding, int c) const;

 private:
  friend class PrototypeUpdater;
  void check_class(int c) const;

  int num_classes_;
  int per_class_;
  int dim_;
  double tau_;
  double momentum_;
  std::vector<double> protos_;
};

// Inter-class contrastive loss for an embedding assigned to (c, k):
//   -log( exp(i.p_{c,k}/tau) / (exp(i.p_{c,k}/tau) + sum_{p in P-} exp(i.p/tau)) )
// where P- holds every prototype of every class other than c. When `grad`
// is non-empty it receives d(loss)/d(i).
double inter_loss(std::span<const double> embedding, const PrototypeBank& bank, int c, int k,
                  std::span<double> grad = {});

// (1 - i.p)^2; `grad` (optional) receives d(loss)/d(i) = -2 (1 - i.p) p.
double intra_loss(std::span<const double> embedding, std::span<const double> prototype,
                  std::span<double> grad = {});

// Pixel embeddings of one batch with their class labels and assignments.
struct AssignedEmbeddings {
  int dim = 0;
  std::vector<double> vectors;  // n * dim
  std::vector<int> classes;
  std::vector<int> slots;       // assigned k per embedding

  [[nodiscard]] std::size_t size() const { return classes.size(); }
  [[nodiscard]] std::span<const double> vector(std::size_t n) const {
    return {vectors.data() + n * dim, static_cast<std::size_t>(dim)};
  }
};

class PrototypeUpdater {
 public:
  // p <- normalize(mu p + (1 - mu) mean(assigned)) for every (c, k) that
  // received at least one embedding. Assignments must come from the pre-update
  // bank. All other prototypes are left untouched.
  static void update(PrototypeBank& bank, const AssignedEmbeddings& batch);
};

inline void update_prototypes(PrototypeBank& bank, const AssignedEmbeddings& batch) {
  PrototypeUpdater::update(bank, batch);
}

// Pixels of a (B, H, W) label grid that take part in the contrastive terms:
// at most `max_per_image` per sample, drawn uniformly without replacement.
// Samples with include[b] == false contribute none.
std::vector<std::size_t> select_pixels(int batch, int height, int width, int max_per_image,
                                       const std::vector<bool>& include, std::mt19937_64& rng);

struct ContrastiveTerms {
  ag::Var inter;
  ag::Var intra;
  AssignedEmbeddings assigned;  // detached copies for the post-step update
};

// Evaluates the mean inter and intra losses over the selected pixels of a
// unit-normalized embedding field (D, B, H, W). `labels` is the (B, H, W)
// class grid. Gradients flow back into `embeddings`.
ContrastiveTerms contrastive_losses(const ag::Var& embeddings, std::span<const int> labels,
                                    std::span<const std::size_t> pixels,
                                    const PrototypeBank& bank);

}  // namespace protodiff
