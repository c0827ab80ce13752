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
#include <filesystem>
#include <string>
#include <vector>

#include "protodiff/conditioning_backbone.hpp"
#include "protodiff/diffusion_decoder.hpp"
#include "protodiff/label_codec.hpp"

namespace protodiff {

struct DiffusionConfig {
  int T = 1000;
  double s_c = 0.008;
  int steps = 3;
  int t_diff = 1;
};

struct LabelConfig {
  float scale_s = 0.1f;
  int latent_channels = 8;
  ReencodeMode reencode_mode = ReencodeMode::kHard;
};

struct ProtoConfig {
  int K = 10;
  double tau = 0.1;
  double mu = 0.999;
  int dim = 16;
  int max_pixels = 1024;
  std::uint64_t seed = 0;
  bool use_pseudo = true;  // pseudo-labelled pixels join the contrastive terms
};

struct TrainConfig {
  int iterations = 1000;
  int batch_size = 8;
  double lr = 5e-4;
  double weight_decay = 1e-6;
  double poly_power = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double lambda_aux = 0.4;
  double lambda_inter = 0.1;
  double lambda_intra = 0.1;
  double lambda_pseudo = 1.0;
  double gt_ratio = 0.5;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // 0 disables periodic checkpoints
  int log_every = 1;
};

struct DataConfig {
  std::string root = "data";
  std::string train_split = "train";
  std::string val_split = "val";
  int num_classes = 3;
};

// Flat key = value configuration. Lines starting with '#' are comments;
// unknown keys are rejected. Every key is listed by `config_keys()`.
struct Config {
  DiffusionConfig diffusion;
  LabelConfig label;
  ProtoConfig proto;
  BackboneConfig backbone;
  DecoderConfig decoder;
  TrainConfig train;
  DataConfig data;

  void set(const std::string& key, const std::string& value);
  [[nodiscard]] std::string get(const std::string& key) const;
  // Checks cross-field constraints; throws ParameterError.
  void validate() const;
};

struct ConfigKey {
  std::string name;
  std::string doc;
};
const std::vector<ConfigKey>& config_keys();

Config parse_config(const std::string& text);
// Reads a file and applies the PROTODIFF_SEED environment override.
Config load_config(const std::filesystem::path& path);
void apply_env_overrides(Config& config);
std::string to_text(const Config& config);

}  // namespace protodiff
