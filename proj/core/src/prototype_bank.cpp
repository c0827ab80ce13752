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


#include "protodiff/prototype_bank.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "protodiff/errors.hpp"
#include "protodiff/ops.hpp"

namespace protodiff {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t d = 0; d < a.size(); ++d) s += a[d] * b[d];
  return s;
}

bool normalize(std::span<double> v) {
  const double n = std::sqrt(dot(v, v));
  if (!(n > 0.0) || !std::isfinite(n)) return false;
  for (double& x : v) x /= n;
  return true;
}

void check_hyper(int num_classes, int per_class, int dim, double tau, double momentum) {
  if (num_classes < 2) throw ParameterError("prototype bank needs at least two classes");
  if (per_class < 1) throw ParameterError("proto.K must be at least 1");
  if (dim < 1) throw ParameterError("proto.dim must be positive");
  if (!(tau > 0.0)) throw ParameterError("proto.tau must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ParameterError("proto.mu must lie in [0, 1)");
}

}  // namespace

LatentProjector::LatentProjector(ParameterStore& store, int in_channels, int out_channels)
    : conv_(Conv2d::create(store, "proto.projector", in_channels, out_channels, 1, 1, false)) {}

ag::Var LatentProjector::project(const ag::Var& features, int* zero_pixels) const {
  return ops::l2_normalize_channels(conv_(features), zero_pixels);
}

Tensor LatentProjector::project(const Tensor& features, int* zero_pixels) const {
  ag::NoGradGuard no_grad;
  return project(ag::Var::constant(features), zero_pixels).value();
}

PrototypeBank::PrototypeBank(int num_classes, int per_class, int dim, double tau, double momentum,
                             std::uint64_t seed)
    : num_classes_(num_classes), per_class_(per_class), dim_(dim), tau_(tau), momentum_(momentum) {
  check_hyper(num_classes, per_class, dim, tau, momentum);
  protos_.resize(static_cast<std::size_t>(num_classes) * per_class * dim);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t p = 0; p < protos_.size(); p += dim) {
    std::span<double> v(protos_.data() + p, dim);
    do {
      for (double& x : v) x = normal(rng);
    } while (!normalize(v));
  }
}

PrototypeBank::PrototypeBank(int num_classes, int per_class, int dim, double tau, double momentum,
                             std::vector<double> vectors)
    : num_classes_(num_classes), per_class_(per_class), dim_(dim), tau_(tau), momentum_(momentum) {
  check_hyper(num_classes, per_class, dim, tau, momentum);
  set_data(vectors);
}

void PrototypeBank::set_data(std::span<const double> values) {
  if (values.size() != static_cast<std::size_t>(num_classes_) * per_class_ * dim_) {
    throw ShapeError("prototype bank: expected " +
                     std::to_string(num_classes_ * per_class_ * dim_) + " values");
  }
  protos_.assign(values.begin(), values.end());
  for (std::size_t p = 0; p < protos_.size(); p += dim_) {
    if (!normalize(std::span<double>(protos_.data() + p, dim_))) {
      throw ValidationError("prototype bank: zero or non-finite prototype");
    }
  }
}

void PrototypeBank::check_class(int c) const {
  if (c < 0 || c >= num_classes_) throw ValidationError("prototype class out of range");
}

std::span<const double> PrototypeBank::prototype(int c, int k) const {
  check_class(c);
  if (k < 0 || k >= per_class_) throw ValidationError("prototype slot out of range");
  return {protos_.data() + (static_cast<std::size_t>(c) * per_class_ + k) * dim_,
          static_cast<std::size_t>(dim_)};
}

int PrototypeBank::assign(std::span<const double> embedding, int c) const {
  check_class(c);
  if (embedding.size() != static_cast<std::size_t>(dim_)) throw ShapeError("assign: dim mismatch");
  int best = 0;
  double best_sim = dot(embedding, prototype(c, 0));
  for (int k = 1; k < per_class_; ++k) {
    const double sim = dot(embedding, prototype(c, k));
    if (sim > best_sim) {
      best_sim = sim;
      best = k;
    }
  }
  return best;
}

double inter_loss(std::span<const double> embedding, const PrototypeBank& bank, int c, int k,
                  std::span<double> grad) {
  if (!(bank.tau() > 0.0)) throw ParameterError("inter_loss: tau must be positive");
  const int dim = bank.dim();
  if (embedding.size() != static_cast<std::size_t>(dim)) throw ShapeError("inter_loss: dim mismatch");
  const double inv_tau = 1.0 / bank.tau();

  // Logits in order: positive first, then every prototype of every other class.
  std::vector<double> logits;
  std::vector<std::span<const double>> members;
  logits.reserve(1 + static_cast<std::size_t>(bank.num_classes() - 1) * bank.per_class());
  members.push_back(bank.prototype(c, k));
  for (int oc = 0; oc < bank.num_classes(); ++oc) {
    if (oc == c) continue;
    for (int ok = 0; ok < bank.per_class(); ++ok) members.push_back(bank.prototype(oc, ok));
  }
  for (const auto& p : members) logits.push_back(dot(embedding, p) * inv_tau);

  const double mx = *std::max_element(logits.begin(), logits.end());
  double denom = 0.0;
  for (double l : logits) denom += std::exp(l - mx);
  const double loss = -(logits.front() - mx - std::log(denom));

  if (!grad.empty()) {
    if (grad.size() != static_cast<std::size_t>(dim)) throw ShapeError("inter_loss: grad size");
    // dL/di = (sum_j softmax_j p_j - p_pos) / tau
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t j = 0; j < members.size(); ++j) {
      const double w = std::exp(logits[j] - mx) / denom - (j == 0 ? 1.0 : 0.0);
      for (int d = 0; d < dim; ++d) grad[d] += w * members[j][d] * inv_tau;
    }
  }
  return loss;
}

double intra_loss(std::span<const double> embedding, std::span<const double> prototype,
                  std::span<double> grad) {
  if (embedding.size() != prototype.size()) throw ShapeError("intra_loss: dim mismatch");
  const double gap = 1.0 - dot(embedding, prototype);
  if (!grad.empty()) {
    if (grad.size() != prototype.size()) throw ShapeError("intra_loss: grad size");
    for (std::size_t d = 0; d < grad.size(); ++d) grad[d] = -2.0 * gap * prototype[d];
  }
  return gap * gap;
}

void PrototypeUpdater::update(PrototypeBank& bank, const AssignedEmbeddings& batch) {
  const int dim = bank.dim_;
  if (batch.size() > 0 && batch.dim != dim) throw ShapeError("update_prototypes: dim mismatch");
  const std::size_t slots = static_cast<std::size_t>(bank.num_classes_) * bank.per_class_;
  std::vector<double> sums(slots * dim, 0.0);
  std::vector<std::size_t> counts(slots, 0);
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const int c = batch.classes[n];
    const int k = batch.slots[n];
    bank.check_class(c);
    if (k < 0 || k >= bank.per_class_) throw ValidationError("update_prototypes: slot out of range");
    const std::size_t slot = static_cast<std::size_t>(c) * bank.per_class_ + k;
    auto v = batch.vector(n);
    for (int d = 0; d < dim; ++d) sums[slot * dim + d] += v[d];
    ++counts[slot];
  }
  const double mu = bank.momentum_;
  std::vector<double> next(dim);
  for (std::size_t slot = 0; slot < slots; ++slot) {
    if (counts[slot] == 0) continue;
    double* p = bank.protos_.data() + slot * dim;
    for (int d = 0; d < dim; ++d) {
      const double mean = sums[slot * dim + d] / static_cast<double>(counts[slot]);
      next[d] = mu * p[d] + (1.0 - mu) * mean;
    }
    // A cancelling update (measure zero) keeps the previous prototype.
    if (normalize(next)) std::copy(next.begin(), next.end(), p);
  }
}

std::vector<std::size_t> select_pixels(int batch, int height, int width, int max_per_image,
                                       const std::vector<bool>& include, std::mt19937_64& rng) {
  if (include.size() != static_cast<std::size_t>(batch)) {
    throw ShapeError("select_pixels: include flags != batch");
  }
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  std::vector<std::size_t> out;
  std::vector<std::size_t> candidates(plane);
  for (int b = 0; b < batch; ++b) {
    if (!include[b]) continue;
    std::iota(candidates.begin(), candidates.end(), static_cast<std::size_t>(b) * plane);
    if (max_per_image >= 0 && plane > static_cast<std::size_t>(max_per_image)) {
      // Partial Fisher-Yates: the first max_per_image entries form a uniform sample.
      for (int i = 0; i < max_per_image; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, plane - 1);
        std::swap(candidates[i], candidates[pick(rng)]);
      }
      std::sort(candidates.begin(), candidates.begin() + max_per_image);
      out.insert(out.end(), candidates.begin(), candidates.begin() + max_per_image);
    } else {
      out.insert(out.end(), candidates.begin(), candidates.end());
    }
  }
  return out;
}

ContrastiveTerms contrastive_losses(const ag::Var& embeddings, std::span<const int> labels,
                                    std::span<const std::size_t> pixels,
                                    const PrototypeBank& bank) {
  const Shape s = embeddings.shape();
  const std::size_t total = static_cast<std::size_t>(s.batch) * s.plane();
  if (s.channels != bank.dim()) throw ShapeError("contrastive_losses: embedding dim != bank dim");
  if (labels.size() != total) throw ShapeError("contrastive_losses: label count mismatch");

  ContrastiveTerms terms;
  AssignedEmbeddings& assigned = terms.assigned;
  assigned.dim = s.channels;
  assigned.vectors.resize(pixels.size() * s.channels);
  assigned.classes.resize(pixels.size());
  assigned.slots.resize(pixels.size());

  const float* z = embeddings.value().data();
  double inter_sum = 0.0;
  double intra_sum = 0.0;
  std::vector<double> inter_grad(pixels.size() * s.channels);
  std::vector<double> intra_grad(pixels.size() * s.channels);
  for (std::size_t n = 0; n < pixels.size(); ++n) {
    const std::size_t p = pixels[n];
    if (p >= total) throw ShapeError("contrastive_losses: pixel index out of range");
    double* v = assigned.vectors.data() + n * s.channels;
    for (int d = 0; d < s.channels; ++d) v[d] = z[d * total + p];
    const int c = labels[p];
    const auto vec = assigned.vector(n);
    const int k = bank.assign(vec, c);
    assigned.classes[n] = c;
    assigned.slots[n] = k;
    inter_sum += inter_loss(vec, bank, c, k, {inter_grad.data() + n * s.channels,
                                              static_cast<std::size_t>(s.channels)});
    intra_sum += intra_loss(vec, bank.prototype(c, k), {intra_grad.data() + n * s.channels,
                                                        static_cast<std::size_t>(s.channels)});
  }
  const double count = std::max<double>(1.0, static_cast<double>(pixels.size()));

  auto make_term = [&](double sum, std::vector<double> grads) {
    Tensor value(Shape{1, 1, 1, 1}, static_cast<float>(sum / count));
    if (!ag::needs_grad({&embeddings}) || pixels.empty()) return ag::Var::constant(std::move(value));
    ag::Node* en = embeddings.node();
    std::vector<std::size_t> px(pixels.begin(), pixels.end());
    return ag::make_result(
        std::move(value), {embeddings},
        [en, total, count, dim = s.channels, px = std::move(px), grads = std::move(grads)](ag::Node& self) {
          const double g = self.grad.data()[0] / count;
          float* d = en->grad_buffer().data();
          for (std::size_t n = 0; n < px.size(); ++n) {
            for (int k = 0; k < dim; ++k) {
              d[k * total + px[n]] += static_cast<float>(g * grads[n * dim + k]);
            }
          }
        });
  };
  terms.inter = make_term(inter_sum, std::move(inter_grad));
  terms.intra = make_term(intra_sum, std::move(intra_grad));
  return terms;
}

}  // namespace protodiff
