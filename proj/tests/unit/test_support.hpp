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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "protodiff/config.hpp"
#include "protodiff/dataset.hpp"
#include "protodiff/image_io.hpp"
#include "protodiff/layers.hpp"
#include "protodiff/synthetic.hpp"
#include "protodiff/tensor.hpp"

namespace protodiff::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, float scale = 1.0f) {
  Tensor t(shape);
  std::normal_distribution<float> n(0.0f, scale);
  for (float& v : t.storage()) v = n(rng);
  return t;
}

inline std::vector<double> random_unit(int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(dim);
  double norm = 0.0;
  for (double& x : v) {
    x = n(rng);
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

inline double dot(const std::vector<double>& a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Small but complete configuration: 2 levels, stride 2, 8 channels.
inline Config tiny_config() {
  Config c;
  c.data.num_classes = 3;
  c.label.latent_channels = 4;
  c.backbone.channels = 8;
  c.backbone.levels = 2;
  c.backbone.stride = 2;
  c.decoder.blocks = 1;
  c.decoder.time_embed_dim = 8;
  c.proto.K = 3;
  c.proto.dim = 4;
  c.proto.max_pixels = 32;
  c.train.iterations = 200;
  c.train.batch_size = 4;
  c.train.lr = 2e-3;
  return c;
}

inline SegSample synthetic_sample(int size, std::uint64_t seed, LabelSource source) {
  SyntheticConfig cfg;
  cfg.image_size = size;
  const SyntheticSample s = generate_synthetic_sample(cfg, seed);
  SegSample out;
  out.name = "s" + std::to_string(seed);
  out.rgb = s.image;
  out.image = image_to_tensor(s.image);
  out.label = source == LabelSource::kGroundTruth ? s.truth : s.pseudo;
  return out;
}

inline std::vector<SegSample> synthetic_pool(int n, int size, std::uint64_t seed, LabelSource source) {
  std::vector<SegSample> pool;
  for (int i = 0; i < n; ++i) pool.push_back(synthetic_sample(size, derive_seed(seed, 99, i), source));
  return pool;
}

}  // namespace protodiff::testing

namespace protodiff::testing {

// Double-precision (C, B, H, W) field for straight-line reference code.
struct Field {
  Shape shape;
  std::vector<double> v;

  Field() = default;
  explicit Field(Shape s) : shape(s), v(s.numel(), 0.0) {}
  explicit Field(const Tensor& t) : shape(t.shape()), v(t.values().begin(), t.values().end()) {}
  double& at(int c, int b, int y, int x) {
    return v[((static_cast<std::size_t>(c) * shape.batch + b) * shape.height + y) * shape.width + x];
  }
  [[nodiscard]] double at(int c, int b, int y, int x) const {
    return v[((static_cast<std::size_t>(c) * shape.batch + b) * shape.height + y) * shape.width + x];
  }
};

inline Field ref_conv(const Field& x, const Tensor& w, const Tensor* bias, int stride, int pad) {
  const int out_c = w.shape().channels;
  const int in_c = w.shape().batch;
  const int k = w.shape().height;
  const int oh = (x.shape.height + 2 * pad - k) / stride + 1;
  const int ow = (x.shape.width + 2 * pad - k) / stride + 1;
  Field y(Shape{out_c, x.shape.batch, oh, ow});
  for (int o = 0; o < out_c; ++o) {
    for (int b = 0; b < x.shape.batch; ++b) {
      for (int r = 0; r < oh; ++r) {
        for (int c = 0; c < ow; ++c) {
          double s = bias != nullptr ? bias->data()[o] : 0.0;
          for (int i = 0; i < in_c; ++i) {
            for (int ky = 0; ky < k; ++ky) {
              for (int kx = 0; kx < k; ++kx) {
                const int yy = r * stride - pad + ky;
                const int xx = c * stride - pad + kx;
                if (yy < 0 || yy >= x.shape.height || xx < 0 || xx >= x.shape.width) continue;
                s += w.at(o, i, ky, kx) * x.at(i, b, yy, xx);
              }
            }
          }
          y.at(o, b, r, c) = s;
        }
      }
    }
  }
  return y;
}

inline Field ref_gelu(Field x) {
  for (double& v : x.v) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
  return x;
}

// Batch norm with batch statistics (biased variance), eps 1e-5.
inline Field ref_batch_norm(Field x, const Tensor& gamma, const Tensor& beta) {
  const auto& s = x.shape;
  const double n = static_cast<double>(s.batch) * s.height * s.width;
  for (int c = 0; c < s.channels; ++c) {
    double mean = 0.0;
    for (int b = 0; b < s.batch; ++b)
      for (int y = 0; y < s.height; ++y)
        for (int xx = 0; xx < s.width; ++xx) mean += x.at(c, b, y, xx);
    mean /= n;
    double var = 0.0;
    for (int b = 0; b < s.batch; ++b)
      for (int y = 0; y < s.height; ++y)
        for (int xx = 0; xx < s.width; ++xx) var += (x.at(c, b, y, xx) - mean) * (x.at(c, b, y, xx) - mean);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + 1e-5);
    for (int b = 0; b < s.batch; ++b)
      for (int y = 0; y < s.height; ++y)
        for (int xx = 0; xx < s.width; ++xx)
          x.at(c, b, y, xx) = gamma.data()[c] * (x.at(c, b, y, xx) - mean) * inv + beta.data()[c];
  }
  return x;
}

inline double max_abs_diff(const Field& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.v.size(); ++i) m = std::max(m, std::abs(a.v[i] - b.data()[i]));
  return m;
}

inline void randomize(Tensor& t, std::mt19937_64& rng, float scale = 1.0f) {
  std::normal_distribution<float> n(0.0f, scale);
  for (float& v : t.storage()) v = n(rng);
}

}  // namespace protodiff::testing

namespace protodiff::testing {

inline Field ref_batch_norm_eval(Field x, const Tensor& gamma, const Tensor& beta,
                                 const Tensor& mean, const Tensor& var) {
  const auto& s = x.shape;
  for (int c = 0; c < s.channels; ++c) {
    const double inv = 1.0 / std::sqrt(double(var.data()[c]) + 1e-5);
    for (int b = 0; b < s.batch; ++b)
      for (int y = 0; y < s.height; ++y)
        for (int xx = 0; xx < s.width; ++xx)
          x.at(c, b, y, xx) = gamma.data()[c] * (x.at(c, b, y, xx) - mean.data()[c]) * inv + beta.data()[c];
  }
  return x;
}

// Half-pixel bilinear resampling with edge clamping.
inline Field ref_resize(const Field& x, int oh, int ow) {
  const auto& s = x.shape;
  Field y(Shape{s.channels, s.batch, oh, ow});
  auto coord = [](int o, int in, int out, int& i0, int& i1, double& f) {
    double src = (o + 0.5) * in / out - 0.5;
    if (src < 0) src = 0;
    i0 = static_cast<int>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    i1 = std::min(i0 + 1, in - 1);
    f = src - i0;
  };
  for (int c = 0; c < s.channels; ++c)
    for (int b = 0; b < s.batch; ++b)
      for (int r = 0; r < oh; ++r)
        for (int q = 0; q < ow; ++q) {
          int y0, y1, x0, x1;
          double fy, fx;
          coord(r, s.height, oh, y0, y1, fy);
          coord(q, s.width, ow, x0, x1, fx);
          y.at(c, b, r, q) = (1 - fy) * ((1 - fx) * x.at(c, b, y0, x0) + fx * x.at(c, b, y0, x1)) +
                             fy * ((1 - fx) * x.at(c, b, y1, x0) + fx * x.at(c, b, y1, x1));
        }
  return y;
}

// Randomizes every parameter and batch-norm statistic of a store.
inline void randomize_store(ParameterStore& store, std::mt19937_64& rng, float scale = 0.3f) {
  for (const auto& [name, var] : store.parameters()) {
    ag::Var v = var;
    randomize(v.mutable_value(), rng, scale);
  }
  std::uniform_real_distribution<float> u(0.5f, 1.5f);
  for (const auto& [name, buf] : store.buffers()) {
    if (name.ends_with("running_var")) {
      for (float& v : buf->storage()) v = u(rng);
    } else {
      randomize(*buf, rng, 0.2f);
    }
  }
}

}  // namespace protodiff::testing

namespace protodiff::testing {

inline const Tensor& buffer(const ParameterStore& store, const std::string& name) {
  for (const auto& [n, b] : store.buffers()) {
    if (n == name) return *b;
  }
  throw std::out_of_range("no buffer " + name);
}

// conv3 (no bias) -> BN -> GELU -> conv1 (bias), looked up by parameter name.
inline Field ref_conv_block(const Field& x, const ParameterStore& store, const std::string& name,
                            bool training) {
  Field h = ref_conv(x, store.parameter(name + ".conv3.weight").value(), nullptr, 1, 1);
  const Tensor& g = store.parameter(name + ".bn.gamma").value();
  const Tensor& b = store.parameter(name + ".bn.beta").value();
  h = training ? ref_batch_norm(h, g, b)
               : ref_batch_norm_eval(h, g, b, buffer(store, name + ".bn.running_mean"),
                                     buffer(store, name + ".bn.running_var"));
  h = ref_gelu(h);
  return ref_conv(h, store.parameter(name + ".conv1.weight").value(),
                  &store.parameter(name + ".conv1.bias").value(), 1, 0);
}

}  // namespace protodiff::testing
