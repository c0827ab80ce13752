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


#include "protodiff/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "protodiff/errors.hpp"

namespace protodiff {

namespace fs = std::filesystem;

namespace {

constexpr std::array<std::array<double, 3>, 6> kShapeColors = {{{0.85, 0.30, 0.25},
                                                                 {0.25, 0.75, 0.35},
                                                                 {0.30, 0.40, 0.90},
                                                                 {0.90, 0.80, 0.20},
                                                                 {0.75, 0.30, 0.80},
                                                                 {0.20, 0.80, 0.85}}};

struct Canvas {
  int size;
  std::vector<double> rgb;  // size * size * 3 in [0, 1]
  std::vector<int> label;
};

// Paints a class onto every pixel where `inside(x, y)` holds.
template <typename Pred>
void paint(Canvas& canvas, int cls, const std::array<double, 3>& color, std::mt19937_64& rng,
           Pred inside) {
  std::normal_distribution<double> jitter(0.0, 0.03);
  for (int y = 0; y < canvas.size; ++y) {
    for (int x = 0; x < canvas.size; ++x) {
      if (!inside(x + 0.5, y + 0.5)) continue;
      const std::size_t p = static_cast<std::size_t>(y) * canvas.size + x;
      canvas.label[p] = cls;
      for (int k = 0; k < 3; ++k) canvas.rgb[p * 3 + k] = color[k] + jitter(rng);
    }
  }
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

SyntheticSample generate_synthetic_sample(const SyntheticConfig& config, std::uint64_t sample_seed) {
  if (config.num_classes < 2) throw ParameterError("synthetic data needs at least two classes");
  if (config.image_size < 8) throw ParameterError("synthetic image size must be at least 8");
  const int n = config.image_size;
  std::mt19937_64 rng(sample_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  Canvas canvas{n, std::vector<double>(static_cast<std::size_t>(n) * n * 3),
                std::vector<int>(static_cast<std::size_t>(n) * n, 0)};

  // Background: grey base, low-frequency stripes and per-pixel noise.
  const double base = uniform(0.30, 0.50);
  const double fx = uniform(0.05, 0.25);
  const double fy = uniform(0.05, 0.25);
  const double phase = uniform(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> noise(0.0, 0.04);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const double tex = 0.08 * std::sin(fx * x + fy * y + phase);
      const std::size_t p = static_cast<std::size_t>(y) * n + x;
      for (int k = 0; k < 3; ++k) canvas.rgb[p * 3 + k] = base + tex + noise(rng);
    }
  }

  const double scale = n / 64.0;
  const int shapes = 1 + static_cast<int>(unit(rng) * 3.0);
  for (int s = 0; s < shapes; ++s) {
    const int cls = 1 + static_cast<int>(unit(rng) * (config.num_classes - 1));
    const auto& color = kShapeColors[(cls - 1) % kShapeColors.size()];
    switch ((cls - 1) % 3) {
      case 0: {
        const double cx = uniform(0.2, 0.8) * n;
        const double cy = uniform(0.2, 0.8) * n;
        const double rx = uniform(7.0, 15.0) * scale;
        const double ry = uniform(7.0, 15.0) * scale;
        paint(canvas, cls, color, rng, [&](double x, double y) {
          const double dx = (x - cx) / rx;
          const double dy = (y - cy) / ry;
          return dx * dx + dy * dy <= 1.0;
        });
        break;
      }
      case 1: {
        const double w = uniform(12.0, 28.0) * scale;
        const double h = uniform(12.0, 28.0) * scale;
        const double x0 = uniform(0.0, n - w);
        const double y0 = uniform(0.0, n - h);
        paint(canvas, cls, color, rng, [&](double x, double y) {
          return x >= x0 && x <= x0 + w && y >= y0 && y <= y0 + h;
        });
        break;
      }
      default: {
        // Vessel: band around y = c + a sin(f x + p), optionally transposed.
        const bool vertical = unit(rng) < 0.5;
        const double centre = uniform(0.25, 0.75) * n;
        const double amp = uniform(3.0, 10.0) * scale;
        const double freq = uniform(0.06, 0.16) / scale;
        const double ph = uniform(0.0, 2.0 * std::numbers::pi);
        const double half = uniform(2.5, 4.0) * scale;
        paint(canvas, cls, color, rng, [&](double x, double y) {
          const double u = vertical ? y : x;
          const double v = vertical ? x : y;
          return std::abs(v - (centre + amp * std::sin(freq * u + ph))) <= half;
        });
        break;
      }
    }
  }

  SyntheticSample sample;
  sample.image.height = n;
  sample.image.width = n;
  sample.image.pixels.resize(canvas.rgb.size());
  for (std::size_t i = 0; i < canvas.rgb.size(); ++i) {
    sample.image.pixels[i] =
        static_cast<std::uint8_t>(std::lround(std::clamp(canvas.rgb[i], 0.0, 1.0) * 255.0));
  }
  sample.truth.height = n;
  sample.truth.width = n;
  sample.truth.num_classes = config.num_classes;
  sample.truth.indices = std::move(canvas.label);
  sample.truth.source = LabelSource::kGroundTruth;
  sample.pseudo = corrupt_mask(sample.truth, config.rho, rng);
  return sample;
}

LabelMap corrupt_mask(const LabelMap& truth, double rho, std::mt19937_64& rng) {
  truth.validate();
  if (!(rho >= 0.0 && rho <= 1.0)) throw ParameterError("corruption rate must lie in [0, 1]");
  LabelMap out = truth;
  out.source = LabelSource::kPseudo;
  if (rho == 0.0) return out;
  const int h = truth.height;
  const int w = truth.width;
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // Boundary morphology: dilation grows foreground into background
  // neighbours, erosion turns foreground next to a different class into it.
  const bool dilate = unit(rng) < 0.5;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int here = truth.at(y, x);
      if (dilate == (here != 0)) continue;
      const std::array<std::pair<int, int>, 4> nbrs{{{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}}};
      for (auto [ny, nx] : nbrs) {
        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
        const int other = truth.at(ny, nx);
        if (other != here && (dilate ? other != 0 : true)) {
          out.indices[static_cast<std::size_t>(y) * w + x] = other;
          break;
        }
      }
    }
  }

  std::size_t changed = 0;
  for (std::size_t p = 0; p < out.indices.size(); ++p) changed += out.indices[p] != truth.indices[p];
  const double total = static_cast<double>(out.indices.size());
  const double boundary_rate = changed / total;
  if (boundary_rate >= rho || truth.num_classes < 2) return out;

  const double flip_rate = (rho - boundary_rate) / (1.0 - boundary_rate);
  std::uniform_int_distribution<int> other_class(1, truth.num_classes - 1);
  for (std::size_t p = 0; p < out.indices.size(); ++p) {
    if (out.indices[p] != truth.indices[p]) continue;
    if (unit(rng) >= flip_rate) continue;
    out.indices[p] = (truth.indices[p] + other_class(rng)) % truth.num_classes;
  }
  return out;
}

void make_synthetic(const fs::path& root, const SyntheticConfig& config) {
  if (config.n_train < 0 || config.n_val < 0) throw ParameterError("sample counts must be >= 0");
  if (!(config.labeled_fraction >= 0.0 && config.labeled_fraction <= 1.0)) {
    throw ParameterError("labeled fraction must lie in [0, 1]");
  }
  const int labeled = static_cast<int>(std::lround(config.labeled_fraction * config.n_train));
  auto write_split = [&](const std::string& split, int count, std::uint64_t stream) {
    const fs::path base = root / split;
    fs::create_directories(base / "images");
    fs::create_directories(base / "masks");
    if (split == "train") fs::create_directories(base / "pseudo_masks");
    for (int i = 0; i < count; ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "%05d.png", i);
      const SyntheticSample s = generate_synthetic_sample(config, derive_seed(config.seed, stream, i));
      write_rgb_png(base / "images" / name, s.image);
      if (split != "train" || i < labeled) {
        write_mask_png(base / "masks" / name, s.truth);
      } else {
        write_mask_png(base / "pseudo_masks" / name, s.pseudo);
      }
    }
  };
  write_split("train", config.n_train, 1);
  write_split("val", config.n_val, 2);
}

}  // namespace protodiff
