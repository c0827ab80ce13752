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


#include "protodiff/noise_schedule.hpp"

#include <algorithm>
#include <numbers>

namespace protodiff {

NoiseSchedule::NoiseSchedule(int total_steps, double cosine_offset)
    : total_steps_(total_steps), offset_(cosine_offset) {
  if (total_steps < 1) throw ParameterError("diffusion.T must be positive");
  if (!(cosine_offset >= 0.0) || !std::isfinite(cosine_offset)) {
    throw ParameterError("diffusion.s_c must be a finite nonnegative number");
  }
  auto f = [&](int t) {
    const double u = (static_cast<double>(t) / total_steps_ + offset_) / (1.0 + offset_);
    const double c = std::cos(u * std::numbers::pi / 2.0);
    return c * c;
  };
  const double f0 = f(0);
  table_.resize(static_cast<std::size_t>(total_steps_) + 1);
  table_.front() = 1.0;
  for (int t = 1; t < total_steps_; ++t) {
    table_[t] = std::clamp(f(t) / f0, 0.0, 1.0);
  }
  // cos(pi/2) evaluates to ~6e-17 in double; the endpoint is zero by definition.
  table_.back() = 0.0;
  for (int t = 1; t <= total_steps_; ++t) table_[t] = std::min(table_[t], table_[t - 1]);
}

double NoiseSchedule::gamma(int t) const {
  if (t < 0 || t > total_steps_) {
    throw RangeError("gamma: t = " + std::to_string(t) + " outside [0, " +
                     std::to_string(total_steps_) + "]");
  }
  return table_[t];
}

int TimeGrid::renoise_target(int i) const {
  if (i < 0 || i + 1 >= static_cast<int>(times.size())) throw RangeError("time grid index");
  return std::max(times[i + 1] - t_diff, 0);
}

TimeGrid make_time_grid(int total_steps, int sampling_steps, int t_diff) {
  if (total_steps < 1) throw ParameterError("time grid: T must be positive");
  if (sampling_steps < 1 || sampling_steps > total_steps) {
    throw ParameterError("time grid: steps must lie in [1, T]");
  }
  if (t_diff < 0) throw ParameterError("time grid: t_diff must be nonnegative");
  TimeGrid grid;
  grid.t_diff = t_diff;
  for (int i = 0; i <= sampling_steps; ++i) {
    const double frac = 1.0 - static_cast<double>(i) / sampling_steps;
    const int t = static_cast<int>(std::lround(frac * total_steps));
    if (grid.times.empty() || t < grid.times.back()) grid.times.push_back(t);
  }
  return grid;
}

Tensor forward_noise(const Tensor& z0, const Tensor& eps, int t, const NoiseSchedule& schedule) {
  if (!(z0.shape() == eps.shape())) {
    throw ShapeError("forward_noise: " + z0.shape().str() + " vs " + eps.shape().str());
  }
  return Tensor(z0.shape(), forward_noise<float>(z0.values(), eps.values(), t, schedule));
}

Tensor ddim_step(const Tensor& z_t, const Tensor& z0_hat, int t, int t_next,
                 const NoiseSchedule& schedule) {
  if (!(z_t.shape() == z0_hat.shape())) {
    throw ShapeError("ddim_step: " + z_t.shape().str() + " vs " + z0_hat.shape().str());
  }
  return Tensor(z_t.shape(), ddim_step<float>(z_t.values(), z0_hat.values(), t, t_next, schedule));
}

}  // namespace protodiff
