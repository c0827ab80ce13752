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


#include "protodiff/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numbers>

#include "protodiff/errors.hpp"

namespace protodiff::ops {

using ag::Node;
using ag::Var;

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

void require_same(const Shape& a, const Shape& b, const char* op) {
  if (!(a == b)) throw ShapeError(std::string(op) + ": " + a.str() + " vs " + b.str());
}

struct ConvGeometry {
  int cin, cout, k, stride, pad;
  int batch, in_h, in_w, out_h, out_w;
  [[nodiscard]] bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
  [[nodiscard]] long rows() const { return static_cast<long>(cin) * k * k; }
  [[nodiscard]] long cols() const { return static_cast<long>(batch) * out_h * out_w; }
};

void im2col(const float* x, const ConvGeometry& g, float* col) {
  const long n_cols = g.cols();
  for (int ci = 0; ci < g.cin; ++ci) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        float* row = col + ((static_cast<long>(ci) * g.k + ky) * g.k + kx) * n_cols;
        for (int b = 0; b < g.batch; ++b) {
          const float* src = x + (static_cast<long>(ci) * g.batch + b) * g.in_h * g.in_w;
          for (int oy = 0; oy < g.out_h; ++oy) {
            const int iy = oy * g.stride - g.pad + ky;
            float* dst = row + (static_cast<long>(b) * g.out_h + oy) * g.out_w;
            if (iy < 0 || iy >= g.in_h) {
              std::fill(dst, dst + g.out_w, 0.0f);
              continue;
            }
            const float* src_row = src + static_cast<long>(iy) * g.in_w;
            for (int ox = 0; ox < g.out_w; ++ox) {
              const int ix = ox * g.stride - g.pad + kx;
              dst[ox] = (ix >= 0 && ix < g.in_w) ? src_row[ix] : 0.0f;
            }
          }
        }
      }
    }
  }
}

void col2im(const float* col, const ConvGeometry& g, float* dx) {
  const long n_cols = g.cols();
  for (int ci = 0; ci < g.cin; ++ci) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const float* row = col + ((static_cast<long>(ci) * g.k + ky) * g.k + kx) * n_cols;
        for (int b = 0; b < g.batch; ++b) {
          float* dst = dx + (static_cast<long>(ci) * g.batch + b) * g.in_h * g.in_w;
          for (int oy = 0; oy < g.out_h; ++oy) {
            const int iy = oy * g.stride - g.pad + ky;
            if (iy < 0 || iy >= g.in_h) continue;
            const float* src = row + (static_cast<long>(b) * g.out_h + oy) * g.out_w;
            float* dst_row = dst + static_cast<long>(iy) * g.in_w;
            for (int ox = 0; ox < g.out_w; ++ox) {
              const int ix = ox * g.stride - g.pad + kx;
              if (ix >= 0 && ix < g.in_w) dst_row[ix] += src[ox];
            }
          }
        }
      }
    }
  }
}

// Axis interpolation table for half-pixel bilinear sampling.
struct AxisTaps {
  std::vector<int> lo, hi;
  std::vector<float> frac;
};

AxisTaps bilinear_taps(int in, int out) {
  AxisTaps taps;
  taps.lo.resize(out);
  taps.hi.resize(out);
  taps.frac.resize(out);
  const double ratio = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    int lo = static_cast<int>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    taps.lo[o] = lo;
    taps.hi[o] = std::min(lo + 1, in - 1);
    taps.frac[o] = static_cast<float>(src - lo);
  }
  return taps;
}

void resize_planes(const Tensor& x, Tensor& out) {
  const Shape& in = x.shape();
  const Shape& os = out.shape();
  const AxisTaps ty = bilinear_taps(in.height, os.height);
  const AxisTaps tx = bilinear_taps(in.width, os.width);
  for (int c = 0; c < in.channels; ++c) {
    for (int b = 0; b < in.batch; ++b) {
      const float* src = x.plane(c, b);
      float* dst = out.plane(c, b);
      for (int oy = 0; oy < os.height; ++oy) {
        const float* r0 = src + static_cast<long>(ty.lo[oy]) * in.width;
        const float* r1 = src + static_cast<long>(ty.hi[oy]) * in.width;
        const float fy = ty.frac[oy];
        for (int ox = 0; ox < os.width; ++ox) {
          const float fx = tx.frac[ox];
          const float top = r0[tx.lo[ox]] * (1.0f - fx) + r0[tx.hi[ox]] * fx;
          const float bot = r1[tx.lo[ox]] * (1.0f - fx) + r1[tx.hi[ox]] * fx;
          dst[static_cast<long>(oy) * os.width + ox] = top * (1.0f - fy) + bot * fy;
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (ws.batch != xs.channels || ws.height != ws.width) {
    throw ShapeError("conv2d: weight " + ws.str() + " incompatible with input " + xs.str());
  }
  ConvGeometry g{};
  g.cin = xs.channels;
  g.cout = ws.channels;
  g.k = ws.height;
  g.stride = stride;
  g.pad = pad;
  g.batch = xs.batch;
  g.in_h = xs.height;
  g.in_w = xs.width;
  g.out_h = (xs.height + 2 * pad - g.k) / stride + 1;
  g.out_w = (xs.width + 2 * pad - g.k) / stride + 1;
  if (g.out_h <= 0 || g.out_w <= 0) throw ShapeError("conv2d: input smaller than kernel");
  if (bias.defined() && bias.value().size() != static_cast<std::size_t>(g.cout)) {
    throw ShapeError("conv2d: bias size mismatch");
  }

  std::vector<float> col;
  const float* col_ptr = x.value().data();
  if (!g.pointwise()) {
    col.resize(static_cast<std::size_t>(g.rows() * g.cols()));
    im2col(x.value().data(), g, col.data());
    col_ptr = col.data();
  }

  Tensor out(Shape{g.cout, g.batch, g.out_h, g.out_w});
  MatMap y(out.data(), g.cout, g.cols());
  ConstMatMap w(weight.value().data(), g.cout, g.rows());
  ConstMatMap c(col_ptr, g.rows(), g.cols());
  y.noalias() = w * c;
  if (bias.defined()) {
    const float* bv = bias.value().data();
    for (int o = 0; o < g.cout; ++o) y.row(o).array() += bv[o];
  }

  if (!ag::needs_grad({&x, &weight, &bias})) return Var::constant(std::move(out));

  std::vector<Var> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  Node* xn = x.node();
  Node* wn = weight.node();
  Node* bn = bias.defined() ? bias.node() : nullptr;
  return ag::make_result(
      std::move(out), std::move(inputs),
      [g, xn, wn, bn, col = std::move(col)](Node& self) {
        ConstMatMap dy(self.grad.data(), g.cout, g.cols());
        const float* col_ptr = g.pointwise() ? xn->value.data() : col.data();
        if (wn->requires_grad) {
          MatMap dw(wn->grad_buffer().data(), g.cout, g.rows());
          ConstMatMap c(col_ptr, g.rows(), g.cols());
          dw.noalias() += dy * c.transpose();
        }
        if (bn != nullptr && bn->requires_grad) {
          float* db = bn->grad_buffer().data();
          // Plain loop: Eigen's vectorized sum depends on buffer alignment.
          const long n_cols = g.cols();
          for (int o = 0; o < g.cout; ++o) {
            const float* row = self.grad.data() + o * n_cols;
            float acc = 0.0f;
            for (long j = 0; j < n_cols; ++j) acc += row[j];
            db[o] += acc;
          }
        }
        if (xn->requires_grad) {
          ConstMatMap w(wn->value.data(), g.cout, g.rows());
          if (g.pointwise()) {
            MatMap dx(xn->grad_buffer().data(), g.rows(), g.cols());
            dx.noalias() += w.transpose() * dy;
          } else {
            RowMat dcol = w.transpose() * dy;
            col2im(dcol.data(), g, xn->grad_buffer().data());
          }
        }
      });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean,
               Tensor& running_var, bool training, float momentum, float eps) {
  const Shape& s = x.shape();
  const int channels = s.channels;
  const std::size_t n = static_cast<std::size_t>(s.batch) * s.plane();
  if (gamma.value().size() != static_cast<std::size_t>(channels) ||
      beta.value().size() != static_cast<std::size_t>(channels)) {
    throw ShapeError("batch_norm: affine parameter size mismatch");
  }
  Tensor out(s);
  std::vector<float> inv_std(channels);
  Tensor xhat(s);
  for (int c = 0; c < channels; ++c) {
    const float* xc = x.value().data() + c * n;
    float mean;
    float var;
    if (training) {
      double sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) sum += xc[i];
      const double m = sum / static_cast<double>(n);
      double sq = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = xc[i] - m;
        sq += d * d;
      }
      mean = static_cast<float>(m);
      var = static_cast<float>(sq / static_cast<double>(n));
      const float unbiased = n > 1 ? static_cast<float>(sq / static_cast<double>(n - 1)) : var;
      running_mean.data()[c] = (1.0f - momentum) * running_mean.data()[c] + momentum * mean;
      running_var.data()[c] = (1.0f - momentum) * running_var.data()[c] + momentum * unbiased;
    } else {
      mean = running_mean.data()[c];
      var = running_var.data()[c];
    }
    const float istd = 1.0f / std::sqrt(var + eps);
    inv_std[c] = istd;
    const float g = gamma.value().data()[c];
    const float b = beta.value().data()[c];
    float* xh = xhat.data() + c * n;
    float* oc = out.data() + c * n;
    for (std::size_t i = 0; i < n; ++i) {
      xh[i] = (xc[i] - mean) * istd;
      oc[i] = g * xh[i] + b;
    }
  }

  if (!ag::needs_grad({&x, &gamma, &beta})) return Var::constant(std::move(out));

  Node* xn = x.node();
  Node* gn = gamma.node();
  Node* bn = beta.node();
  return ag::make_result(
      std::move(out), {x, gamma, beta},
      [channels, n, training, xn, gn, bn, inv_std = std::move(inv_std),
       xhat = std::move(xhat)](Node& self) {
        for (int c = 0; c < channels; ++c) {
          const float* dy = self.grad.data() + c * n;
          const float* xh = xhat.data() + c * n;
          double sum_dy = 0.0;
          double sum_dy_xh = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            sum_dy += dy[i];
            sum_dy_xh += static_cast<double>(dy[i]) * xh[i];
          }
          if (gn->requires_grad) gn->grad_buffer().data()[c] += static_cast<float>(sum_dy_xh);
          if (bn->requires_grad) bn->grad_buffer().data()[c] += static_cast<float>(sum_dy);
          if (!xn->requires_grad) continue;
          const float g = gn->value.data()[c];
          float* dx = xn->grad_buffer().data() + c * n;
          if (training) {
            const float mean_dy = static_cast<float>(sum_dy / static_cast<double>(n));
            const float mean_dy_xh = static_cast<float>(sum_dy_xh / static_cast<double>(n));
            const float k = g * inv_std[c];
            for (std::size_t i = 0; i < n; ++i) dx[i] += k * (dy[i] - mean_dy - xh[i] * mean_dy_xh);
          } else {
            const float k = g * inv_std[c];
            for (std::size_t i = 0; i < n; ++i) dx[i] += k * dy[i];
          }
        }
      });
}

Var gelu(const Var& x) {
  Tensor out(x.shape());
  const float* xv = x.value().data();
  float* ov = out.data();
  constexpr float kInvSqrt2 = static_cast<float>(1.0 / std::numbers::sqrt2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    ov[i] = 0.5f * xv[i] * (1.0f + std::erf(xv[i] * kInvSqrt2));
  }
  if (!ag::needs_grad({&x})) return Var::constant(std::move(out));
  Node* xn = x.node();
  return ag::make_result(std::move(out), {x}, [xn](Node& self) {
    constexpr float kInvSqrt2 = static_cast<float>(1.0 / std::numbers::sqrt2);
    constexpr float kInvSqrt2Pi = static_cast<float>(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
    const float* xv = xn->value.data();
    const float* dy = self.grad.data();
    float* dx = xn->grad_buffer().data();
    for (std::size_t i = 0; i < self.value.size(); ++i) {
      const float v = xv[i];
      const float cdf = 0.5f * (1.0f + std::erf(v * kInvSqrt2));
      const float pdf = kInvSqrt2Pi * std::exp(-0.5f * v * v);
      dx[i] += dy[i] * (cdf + v * pdf);
    }
  });
}

Var sigmoid(const Var& x) {
  Tensor out(x.shape());
  const float* xv = x.value().data();
  float* ov = out.data();
  // Clamped so the codomain stays strictly inside (0, 1) in float.
  constexpr float kHi = 1.0f - 0x1p-24f;
  constexpr float kLo = std::numeric_limits<float>::min();
  for (std::size_t i = 0; i < out.size(); ++i) {
    ov[i] = std::clamp(1.0f / (1.0f + std::exp(-xv[i])), kLo, kHi);
  }
  if (!ag::needs_grad({&x})) return Var::constant(std::move(out));
  Node* xn = x.node();
  return ag::make_result(std::move(out), {x}, [xn](Node& self) {
    const float* y = self.value.data();
    const float* dy = self.grad.data();
    float* dx = xn->grad_buffer().data();
    for (std::size_t i = 0; i < self.value.size(); ++i) dx[i] += dy[i] * y[i] * (1.0f - y[i]);
  });
}

Var add(const Var& a, const Var& b) {
  require_same(a.shape(), b.shape(), "add");
  Tensor out = a.value();
  add_inplace(out, b.value());
  if (!ag::needs_grad({&a, &b})) return Var::constant(std::move(out));
  Node* an = a.node();
  Node* bn = b.node();
  return ag::make_result(std::move(out), {a, b}, [an, bn](Node& self) {
    if (an->requires_grad) add_inplace(an->grad_buffer(), self.grad);
    if (bn->requires_grad) add_inplace(bn->grad_buffer(), self.grad);
  });
}

Var scale(const Var& x, float factor) {
  Tensor out = x.value();
  for (float& v : out.values()) v *= factor;
  if (!ag::needs_grad({&x})) return Var::constant(std::move(out));
  Node* xn = x.node();
  return ag::make_result(std::move(out), {x}, [xn, factor](Node& self) {
    float* dx = xn->grad_buffer().data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) dx[i] += factor * self.grad.data()[i];
  });
}

Var scale_per_sample(const Var& x, std::span<const float> factors) {
  const Shape s = x.shape();
  if (factors.size() != static_cast<std::size_t>(s.batch)) {
    throw ShapeError("scale_per_sample: factor count != batch");
  }
  Tensor out = x.value();
  for (int c = 0; c < s.channels; ++c) {
    for (int b = 0; b < s.batch; ++b) {
      float* p = out.plane(c, b);
      for (std::size_t i = 0; i < s.plane(); ++i) p[i] *= factors[b];
    }
  }
  if (!ag::needs_grad({&x})) return Var::constant(std::move(out));
  Node* xn = x.node();
  std::vector<float> f(factors.begin(), factors.end());
  return ag::make_result(std::move(out), {x}, [xn, s, f = std::move(f)](Node& self) {
    Tensor& dx = xn->grad_buffer();
    for (int c = 0; c < s.channels; ++c) {
      for (int b = 0; b < s.batch; ++b) {
        const float* dy = self.grad.plane(c, b);
        float* d = dx.plane(c, b);
        for (std::size_t i = 0; i < s.plane(); ++i) d[i] += f[b] * dy[i];
      }
    }
  });
}

Var add_hw_broadcast(const Var& x, const Var& e) {
  const Shape s = x.shape();
  const Shape es = e.shape();
  if (es.channels != s.channels || es.batch != s.batch || es.height != 1 || es.width != 1) {
    throw ShapeError("add_hw_broadcast: " + s.str() + " vs " + es.str());
  }
  Tensor out = x.value();
  for (int c = 0; c < s.channels; ++c) {
    for (int b = 0; b < s.batch; ++b) {
      const float v = e.value().at(c, b, 0, 0);
      float* p = out.plane(c, b);
      for (std::size_t i = 0; i < s.plane(); ++i) p[i] += v;
    }
  }
  if (!ag::needs_grad({&x, &e})) return Var::constant(std::move(out));
  Node* xn = x.node();
  Node* en = e.node();
  return ag::make_result(std::move(out), {x, e}, [xn, en, s](Node& self) {
    if (xn->requires_grad) add_inplace(xn->grad_buffer(), self.grad);
    if (en->requires_grad) {
      Tensor& de = en->grad_buffer();
      for (int c = 0; c < s.channels; ++c) {
        for (int b = 0; b < s.batch; ++b) {
          const float* dy = self.grad.plane(c, b);
          double acc = 0.0;
          for (std::size_t i = 0; i < s.plane(); ++i) acc += dy[i];
          de.at(c, b, 0, 0) += static_cast<float>(acc);
        }
      }
    }
  });
}

Var mul_mask(const Var& mask, const Var& f) {
  const Shape fs = f.shape();
  const Shape ms = mask.shape();
  if (ms.channels != 1 || ms.batch != fs.batch || ms.height != fs.height || ms.width != fs.width) {
    throw ShapeError("mul_mask: mask " + ms.str() + " vs features " + fs.str());
  }
  Tensor out(fs);
  for (int c = 0; c < fs.channels; ++c) {
    for (int b = 0; b < fs.batch; ++b) {
      const float* m = mask.value().plane(0, b);
      const float* src = f.value().plane(c, b);
      float* dst = out.plane(c, b);
      for (std::size_t i = 0; i < fs.plane(); ++i) dst[i] = m[i] * src[i];
    }
  }
  if (!ag::needs_grad({&mask, &f})) return Var::constant(std::move(out));
  Node* mn = mask.node();
  Node* fn = f.node();
  return ag::make_result(std::move(out), {mask, f}, [mn, fn, fs](Node& self) {
    for (int c = 0; c < fs.channels; ++c) {
      for (int b = 0; b < fs.batch; ++b) {
        const float* dy = self.grad.plane(c, b);
        if (fn->requires_grad) {
          const float* m = mn->value.plane(0, b);
          float* df = fn->grad_buffer().plane(c, b);
          for (std::size_t i = 0; i < fs.plane(); ++i) df[i] += dy[i] * m[i];
        }
        if (mn->requires_grad) {
          const float* src = fn->value.plane(c, b);
          float* dm = mn->grad_buffer().plane(0, b);
          for (std::size_t i = 0; i < fs.plane(); ++i) dm[i] += dy[i] * src[i];
        }
      }
    }
  });
}

Var concat_channels(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape first = parts.front().shape();
  int channels = 0;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    if (s.batch != first.batch || s.height != first.height || s.width != first.width) {
      throw ShapeError("concat_channels: " + s.str() + " vs " + first.str());
    }
    channels += s.channels;
  }
  Tensor out(Shape{channels, first.batch, first.height, first.width});
  std::size_t offset = 0;
  for (const Var& p : parts) {
    std::memcpy(out.data() + offset, p.value().data(), p.value().size() * sizeof(float));
    offset += p.value().size();
  }
  bool any = false;
  for (const Var& p : parts) any = any || ag::needs_grad({&p});
  if (!any) return Var::constant(std::move(out));
  std::vector<Var> inputs(parts.begin(), parts.end());
  std::vector<Node*> nodes;
  for (const Var& p : parts) nodes.push_back(p.node());
  return ag::make_result(std::move(out), std::move(inputs), [nodes](Node& self) {
    std::size_t offset = 0;
    for (Node* n : nodes) {
      const std::size_t len = n->value.size();
      if (n->requires_grad) {
        float* d = n->grad_buffer().data();
        const float* g = self.grad.data() + offset;
        for (std::size_t i = 0; i < len; ++i) d[i] += g[i];
      }
      offset += len;
    }
  });
}

Tensor resize_bilinear(const Tensor& x, int height, int width) {
  const Shape& s = x.shape();
  if (height <= 0 || width <= 0) throw ShapeError("resize_bilinear: empty target");
  Tensor out(Shape{s.channels, s.batch, height, width});
  resize_planes(x, out);
  return out;
}

Var resize_bilinear(const Var& x, int height, int width) {
  const Shape s = x.shape();
  if (s.height == height && s.width == width) return x;
  Tensor out = resize_bilinear(x.value(), height, width);
  if (!ag::needs_grad({&x})) return Var::constant(std::move(out));
  Node* xn = x.node();
  return ag::make_result(std::move(out), {x}, [xn, s, height, width](Node& self) {
    const AxisTaps ty = bilinear_taps(s.height, height);
    const AxisTaps tx = bilinear_taps(s.width, width);
    Tensor& dx = xn->grad_buffer();
    for (int c = 0; c < s.channels; ++c) {
      for (int b = 0; b < s.batch; ++b) {
        const float* dy = self.grad.plane(c, b);
        float* d = dx.plane(c, b);
        for (int oy = 0; oy < height; ++oy) {
          float* r0 = d + static_cast<long>(ty.lo[oy]) * s.width;
          float* r1 = d + static_cast<long>(ty.hi[oy]) * s.width;
          const float fy = ty.frac[oy];
          for (int ox = 0; ox < width; ++ox) {
            const float g = dy[static_cast<long>(oy) * width + ox];
            const float fx = tx.frac[ox];
            r0[tx.lo[ox]] += g * (1.0f - fy) * (1.0f - fx);
            r0[tx.hi[ox]] += g * (1.0f - fy) * fx;
            r1[tx.lo[ox]] += g * fy * (1.0f - fx);
            r1[tx.hi[ox]] += g * fy * fx;
          }
        }
      }
    }
  });
}

Var l2_normalize_channels(const Var& x, int* zero_pixels) {
  const Shape s = x.shape();
  const std::size_t pixels = static_cast<std::size_t>(s.batch) * s.plane();
  Tensor out(s);
  std::vector<float> inv_norm(pixels, 0.0f);
  int zeros = 0;
  const float* xv = x.value().data();
  float* ov = out.data();
  for (std::size_t p = 0; p < pixels; ++p) {
    double sq = 0.0;
    for (int c = 0; c < s.channels; ++c) {
      const double v = xv[c * pixels + p];
      sq += v * v;
    }
    if (sq == 0.0) {
      ++zeros;
      ov[p] = 1.0f;
      continue;
    }
    const float inv = static_cast<float>(1.0 / std::sqrt(sq));
    inv_norm[p] = inv;
    for (int c = 0; c < s.channels; ++c) ov[c * pixels + p] = xv[c * pixels + p] * inv;
  }
  if (zero_pixels != nullptr) *zero_pixels = zeros;
  if (!ag::needs_grad({&x})) return Var::constant(std::move(out));
  Node* xn = x.node();
  return ag::make_result(
      std::move(out), {x}, [xn, s, pixels, inv_norm = std::move(inv_norm)](Node& self) {
        const float* y = self.value.data();
        const float* dy = self.grad.data();
        float* dx = xn->grad_buffer().data();
        for (std::size_t p = 0; p < pixels; ++p) {
          if (inv_norm[p] == 0.0f) continue;
          double dot = 0.0;
          for (int c = 0; c < s.channels; ++c) dot += static_cast<double>(y[c * pixels + p]) * dy[c * pixels + p];
          const float d = static_cast<float>(dot);
          for (int c = 0; c < s.channels; ++c) {
            const std::size_t i = c * pixels + p;
            dx[i] += (dy[i] - y[i] * d) * inv_norm[p];
          }
        }
      });
}

Var minmax_scale_per_sample(const Var& x, float scale, std::vector<bool>* degenerate) {
  const Shape s = x.shape();
  Tensor out(s);
  struct Extent {
    std::size_t argmin = 0, argmax = 0;
    float range = 0.0f;
  };
  std::vector<Extent> ext(s.batch);
  if (degenerate != nullptr) degenerate->assign(s.batch, false);
  for (int b = 0; b < s.batch; ++b) {
    float mn = x.value().at(0, b, 0, 0);
    float mx = mn;
    Extent& e = ext[b];
    e.argmin = e.argmax = x.value().index(0, b, 0, 0);
    for (int c = 0; c < s.channels; ++c) {
      const float* p = x.value().plane(c, b);
      for (std::size_t i = 0; i < s.plane(); ++i) {
        if (p[i] < mn) {
          mn = p[i];
          e.argmin = x.value().index(c, b, 0, 0) + i;
        }
        if (p[i] > mx) {
          mx = p[i];
          e.argmax = x.value().index(c, b, 0, 0) + i;
        }
      }
    }
    e.range = mx - mn;
    if (!(e.range > 0.0f)) {
      e.range = 0.0f;
      if (degenerate != nullptr) (*degenerate)[b] = true;
      for (int c = 0; c < s.channels; ++c) std::fill_n(out.plane(c, b), s.plane(), 0.0f);
      continue;
    }
    const float k = 2.0f / e.range;
    for (int c = 0; c < s.channels; ++c) {
      const float* p = x.value().plane(c, b);
      float* o = out.plane(c, b);
      for (std::size_t i = 0; i < s.plane(); ++i) o[i] = scale * ((p[i] - mn) * k - 1.0f);
    }
    // Pin the extremes so the range is exactly [-scale, +scale].
    out.data()[e.argmin] = -scale;
    out.data()[e.argmax] = scale;
  }
  if (!ag::needs_grad({&x})) return Var::constant(std::move(out));
  Node* xn = x.node();
  return ag::make_result(std::move(out), {x}, [xn, s, scale, ext = std::move(ext)](Node& self) {
    Tensor& dx = xn->grad_buffer();
    for (int b = 0; b < s.batch; ++b) {
      const Extent& e = ext[b];
      if (e.range == 0.0f) continue;
      // y = scale * (2 (x - min) / r - 1); d/dmin = scale (y/scale - 1) / r,
      // d/dmax = -scale (y/scale + 1) / r.
      double dmin = 0.0;
      double dmax = 0.0;
      const float k = 2.0f * scale / e.range;
      for (int c = 0; c < s.channels; ++c) {
        const float* dy = self.grad.plane(c, b);
        const float* y = self.value.plane(c, b);
        float* d = dx.plane(c, b);
        for (std::size_t i = 0; i < s.plane(); ++i) {
          d[i] += k * dy[i];
          const double u = y[i] / scale;
          dmin += dy[i] * scale * (u - 1.0) / e.range;
          dmax -= dy[i] * scale * (u + 1.0) / e.range;
        }
      }
      dx.data()[e.argmin] += static_cast<float>(dmin);
      dx.data()[e.argmax] += static_cast<float>(dmax);
    }
  });
}

Var cross_entropy(const Var& logits, std::span<const int> labels,
                  std::span<const float> sample_weights) {
  const Shape s = logits.shape();
  const std::size_t pixels = static_cast<std::size_t>(s.batch) * s.plane();
  if (labels.size() != pixels) throw ShapeError("cross_entropy: label count mismatch");
  if (sample_weights.size() != static_cast<std::size_t>(s.batch)) {
    throw ShapeError("cross_entropy: weight count != batch");
  }
  const float* z = logits.value().data();
  Tensor probs(s);
  double total = 0.0;
  for (std::size_t p = 0; p < pixels; ++p) {
    const int label = labels[p];
    if (label < 0 || label >= s.channels) throw ValidationError("cross_entropy: label out of range");
    float mx = z[p];
    for (int c = 1; c < s.channels; ++c) mx = std::max(mx, z[c * pixels + p]);
    double denom = 0.0;
    for (int c = 0; c < s.channels; ++c) {
      const double e = std::exp(static_cast<double>(z[c * pixels + p]) - mx);
      probs.data()[c * pixels + p] = static_cast<float>(e);
      denom += e;
    }
    for (int c = 0; c < s.channels; ++c) {
      probs.data()[c * pixels + p] = static_cast<float>(probs.data()[c * pixels + p] / denom);
    }
    const double log_p = static_cast<double>(z[label * pixels + p]) - mx - std::log(denom);
    total -= sample_weights[p / s.plane()] * log_p;
  }
  Tensor out(Shape{1, 1, 1, 1}, static_cast<float>(total / static_cast<double>(pixels)));
  if (!ag::needs_grad({&logits})) return Var::constant(std::move(out));
  Node* ln = logits.node();
  std::vector<int> lab(labels.begin(), labels.end());
  std::vector<float> w(sample_weights.begin(), sample_weights.end());
  return ag::make_result(
      std::move(out), {logits},
      [ln, s, pixels, probs = std::move(probs), lab = std::move(lab), w = std::move(w)](Node& self) {
        const float g = self.grad.data()[0] / static_cast<float>(pixels);
        float* d = ln->grad_buffer().data();
        for (std::size_t p = 0; p < pixels; ++p) {
          const float gw = g * w[p / s.plane()];
          for (int c = 0; c < s.channels; ++c) {
            const float target = c == lab[p] ? 1.0f : 0.0f;
            d[c * pixels + p] += gw * (probs.data()[c * pixels + p] - target);
          }
        }
      });
}

Var weighted_sum(std::span<const Var> scalars, std::span<const float> weights) {
  if (scalars.size() != weights.size()) throw ShapeError("weighted_sum: size mismatch");
  double total = 0.0;
  bool any = false;
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    total += static_cast<double>(weights[i]) * scalars[i].item();
    any = any || ag::needs_grad({&scalars[i]});
  }
  Tensor out(Shape{1, 1, 1, 1}, static_cast<float>(total));
  if (!any) return Var::constant(std::move(out));
  std::vector<Var> inputs(scalars.begin(), scalars.end());
  std::vector<Node*> nodes;
  for (const Var& v : scalars) nodes.push_back(v.node());
  std::vector<float> w(weights.begin(), weights.end());
  return ag::make_result(std::move(out), std::move(inputs),
                         [nodes, w = std::move(w)](Node& self) {
                           for (std::size_t i = 0; i < nodes.size(); ++i) {
                             if (nodes[i]->requires_grad) {
                               nodes[i]->grad_buffer().data()[0] += w[i] * self.grad.data()[0];
                             }
                           }
                         });
}

std::vector<int> argmax_channels(const Tensor& logits) {
  const Shape& s = logits.shape();
  const std::size_t pixels = static_cast<std::size_t>(s.batch) * s.plane();
  std::vector<int> out(pixels, 0);
  const float* z = logits.data();
  for (std::size_t p = 0; p < pixels; ++p) {
    float best = z[p];
    for (int c = 1; c < s.channels; ++c) {
      if (z[c * pixels + p] > best) {
        best = z[c * pixels + p];
        out[p] = c;
      }
    }
  }
  return out;
}

Tensor softmax_channels(const Tensor& logits) {
  const Shape& s = logits.shape();
  const std::size_t pixels = static_cast<std::size_t>(s.batch) * s.plane();
  Tensor out(s);
  const float* z = logits.data();
  for (std::size_t p = 0; p < pixels; ++p) {
    float mx = z[p];
    for (int c = 1; c < s.channels; ++c) mx = std::max(mx, z[c * pixels + p]);
    double denom = 0.0;
    for (int c = 0; c < s.channels; ++c) denom += std::exp(static_cast<double>(z[c * pixels + p]) - mx);
    for (int c = 0; c < s.channels; ++c) {
      out.data()[c * pixels + p] =
          static_cast<float>(std::exp(static_cast<double>(z[c * pixels + p]) - mx) / denom);
    }
  }
  return out;
}

std::vector<int> resize_nearest_labels(std::span<const int> labels, int batch, int height,
                                       int width, int out_height, int out_width) {
  if (labels.size() != static_cast<std::size_t>(batch) * height * width) {
    throw ShapeError("resize_nearest_labels: label count mismatch");
  }
  std::vector<int> out(static_cast<std::size_t>(batch) * out_height * out_width);
  for (int b = 0; b < batch; ++b) {
    for (int y = 0; y < out_height; ++y) {
      const int sy = std::min(height - 1, static_cast<int>((y + 0.5) * height / out_height));
      for (int x = 0; x < out_width; ++x) {
        const int sx = std::min(width - 1, static_cast<int>((x + 0.5) * width / out_width));
        out[(static_cast<std::size_t>(b) * out_height + y) * out_width + x] =
            labels[(static_cast<std::size_t>(b) * height + sy) * width + sx];
      }
    }
  }
  return out;
}

}  // namespace protodiff::ops
