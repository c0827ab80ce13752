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

#include <cmath>
#include <concepts>
#include <span>
#include <string>
#include <vector>

#include "protodiff/errors.hpp"
#include "protodiff/tensor.hpp"

namespace protodiff {

// Squared-cosine signal-retention schedule gamma(t) on the integer grid
// t = 0..T:
//
//   f(t) = cos^2( ((t / T + offset) / (1 + offset)) * pi / 2 ),  gamma = f(t) / f(0).
//
// The table is computed once in double precision; gamma(0) = 1 and
// gamma(T) = 0 are stored exactly.
class NoiseSchedule {
 public:
  explicit NoiseSchedule(int total_steps = 1000, double cosine_offset = 0.008);

  [[nodiscard]] int total_steps() const { return total_steps_; }
  [[nodiscard]] double cosine_offset() const { return offset_; }
  [[nodiscard]] double gamma(int t) const;
  [[nodiscard]] std::span<const double> table() const { return table_; }

 private:
  int total_steps_;
  double offset_;
  std::vector<double> table_;
};

// Descending sampling times from T to 0 plus the re-noising shift. The denoiser
// runs at times[i]; the state is moved to renoise_target(i).
struct TimeGrid {
  std::vector<int> times;
  int t_diff = 0;

  [[nodiscard]] int steps() const { return static_cast<int>(times.size()) - 1; }
  [[nodiscard]] int renoise_target(int i) const;
};

TimeGrid make_time_grid(int total_steps, int sampling_steps, int t_diff);

namespace detail {
inline void require_same_size(std::size_t a, std::size_t b, const char* op) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": size " + std::to_string(a) + " vs " + std::to_string(b));
  }
}
}  // namespace detail

// z_t = sqrt(gamma(t)) z0 + sqrt(1 - gamma(t)) eps, elementwise.
template <std::floating_point T>
std::vector<T> forward_noise(std::span<const T> z0, std::span<const T> eps, int t,
                             const NoiseSchedule& schedule) {
  detail::require_same_size(z0.size(), eps.size(), "forward_noise");
  const double g = schedule.gamma(t);
  std::vector<T> out(z0.size());
  if (g == 1.0) {
    out.assign(z0.begin(), z0.end());
    return out;
  }
  if (g == 0.0) {
    out.assign(eps.begin(), eps.end());
    return out;
  }
  const T a = static_cast<T>(std::sqrt(g));
  const T b = static_cast<T>(std::sqrt(1.0 - g));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * z0[i] + b * eps[i];
  return out;
}

// Deterministic (eta = 0) DDIM transition from time t to t_next < t:
//   eps_hat = (z_t - sqrt(gamma_t) z0_hat) / sqrt(1 - gamma_t)
//   z_next  = sqrt(gamma_next) z0_hat + sqrt(1 - gamma_next) eps_hat
template <std::floating_point T>
std::vector<T> ddim_step(std::span<const T> z_t, std::span<const T> z0_hat, int t, int t_next,
                         const NoiseSchedule& schedule) {
  detail::require_same_size(z_t.size(), z0_hat.size(), "ddim_step");
  if (t <= 0) throw InvalidTransitionError("ddim_step: cannot step from t = 0");
  if (t_next >= t || t_next < 0) {
    throw InvalidTransitionError("ddim_step: t_next must satisfy 0 <= t_next < t");
  }
  const double g = schedule.gamma(t);
  const double g_next = schedule.gamma(t_next);
  if (!(g < 1.0)) throw InvalidTransitionError("ddim_step: gamma(t) must be < 1 for t > 0");
  const double a = std::sqrt(g);
  const double inv_b = 1.0 / std::sqrt(1.0 - g);
  const double a_next = std::sqrt(g_next);
  const double b_next = std::sqrt(1.0 - g_next);
  std::vector<T> out(z_t.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!std::isfinite(z_t[i]) || !std::isfinite(z0_hat[i])) {
      throw NumericError("ddim_step: non-finite input");
    }
    if (g_next == 1.0) {
      out[i] = z0_hat[i];
      continue;
    }
    const double eps_hat = (static_cast<double>(z_t[i]) - a * z0_hat[i]) * inv_b;
    out[i] = static_cast<T>(a_next * z0_hat[i] + b_next * eps_hat);
  }
  return out;
}

Tensor forward_noise(const Tensor& z0, const Tensor& eps, int t, const NoiseSchedule& schedule);
Tensor ddim_step(const Tensor& z_t, const Tensor& z0_hat, int t, int t_next,
                 const NoiseSchedule& schedule);

}  // namespace protodiff
