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

#include <span>
#include <vector>

#include "protodiff/autograd.hpp"

// Differentiable tensor primitives. Activations use the (C, B, H, W) layout
// from tensor.hpp; convolution weights are stored as (out, in, k, k) in the
// same four slots.
namespace protodiff::ops {

// 2-D cross-correlation with square kernel, zero padding. `bias` may be an
// undefined Var. Lowered to one GEMM over the whole batch.
ag::Var conv2d(const ag::Var& x, const ag::Var& weight, const ag::Var& bias, int stride,
               int pad);

// Batch normalization over (B, H, W) per channel. In training mode uses the
// batch statistics and updates the running estimates in place.
ag::Var batch_norm(const ag::Var& x, const ag::Var& gamma, const ag::Var& beta,
                   Tensor& running_mean, Tensor& running_var, bool training,
                   float momentum = 0.1f, float eps = 1e-5f);

ag::Var gelu(const ag::Var& x);
ag::Var sigmoid(const ag::Var& x);
ag::Var add(const ag::Var& a, const ag::Var& b);
ag::Var scale(const ag::Var& x, float factor);
// Multiplies every element of sample b by factors[b].
ag::Var scale_per_sample(const ag::Var& x, std::span<const float> factors);
// x: (C, B, H, W), e: (C, B, 1, 1); adds e broadcast over the spatial grid.
ag::Var add_hw_broadcast(const ag::Var& x, const ag::Var& e);
// mask: (1, B, H, W) broadcast over the channels of f: (C, B, H, W).
ag::Var mul_mask(const ag::Var& mask, const ag::Var& f);
ag::Var concat_channels(std::span<const ag::Var> parts);

// Bilinear resampling with half-pixel centers (align_corners = false).
ag::Var resize_bilinear(const ag::Var& x, int height, int width);

// Per-pixel unit normalization across channels. All-zero pixels become the
// first basis vector and carry no gradient; their count is reported.
ag::Var l2_normalize_channels(const ag::Var& x, int* zero_pixels = nullptr);

// Per-sample affine map of min -> -scale and max -> +scale. A constant sample
// maps to all zeros and is flagged in `degenerate` (one entry per sample).
ag::Var minmax_scale_per_sample(const ag::Var& x, float scale,
                                std::vector<bool>* degenerate = nullptr);

// Mean over all B*H*W pixels of weight[b] * (-log softmax(logits)[label]).
ag::Var cross_entropy(const ag::Var& logits, std::span<const int> labels,
                      std::span<const float> sample_weights);

// sum_i weights[i] * scalars[i] for single-element Vars.
ag::Var weighted_sum(std::span<const ag::Var> scalars, std::span<const float> weights);

// --- non-differentiable helpers -------------------------------------------

// Per-pixel argmax over channels; ties resolve to the lowest channel index.
std::vector<int> argmax_channels(const Tensor& logits);
Tensor softmax_channels(const Tensor& logits);
Tensor resize_bilinear(const Tensor& x, int height, int width);
// Nearest-neighbour resampling of a (B, H, W) label grid, sampling source
// pixel floor((y + 0.5) * H / height).
std::vector<int> resize_nearest_labels(std::span<const int> labels, int batch, int height,
                                       int width, int out_height, int out_width);

}  // namespace protodiff::ops
