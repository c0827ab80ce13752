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


#include "protodiff/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "protodiff/errors.hpp"

namespace protodiff {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ParameterError("config key '" + key + "': cannot parse '" + text + "'");
  }
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ParameterError("config key '" + key + "': expected true/false, got '" + text + "'");
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct Field {
  std::string doc;
  std::function<void(Config&, const std::string&)> set;
  std::function<std::string(const Config&)> get;
};

template <typename Member>
Field bind(std::string doc, Member member) {
  Field f;
  f.doc = std::move(doc);
  f.set = [member](Config& c, const std::string& v) {
    auto& ref = std::invoke(member, c);
    using T = std::remove_reference_t<decltype(ref)>;
    if constexpr (std::is_same_v<T, std::string>) {
      ref = v;
    } else if constexpr (std::is_same_v<T, bool>) {
      ref = parse_bool("", v);
    } else if constexpr (std::is_same_v<T, float>) {
      ref = static_cast<float>(parse_number<double>("", v));
    } else {
      ref = parse_number<T>("", v);
    }
  };
  f.get = [member](const Config& c) -> std::string {
    const auto& ref = std::invoke(member, const_cast<Config&>(c));
    using T = std::remove_cvref_t<decltype(ref)>;
    if constexpr (std::is_same_v<T, std::string>) {
      return ref;
    } else if constexpr (std::is_same_v<T, bool>) {
      return ref ? "true" : "false";
    } else if constexpr (std::is_floating_point_v<T>) {
      return format_double(ref);
    } else {
      return std::to_string(ref);
    }
  };
  return f;
}

// Ordered registry; std::map keeps to_text output sorted and stable.
const std::map<std::string, Field>& registry() {
  static const std::map<std::string, Field> fields = [] {
    std::map<std::string, Field> m;
    m["diffusion.T"] = bind("total diffusion steps", [](Config& c) -> auto& { return c.diffusion.T; });
    m["diffusion.s_c"] = bind("cosine schedule offset", [](Config& c) -> auto& { return c.diffusion.s_c; });
    m["diffusion.steps"] = bind("sampling steps S at inference", [](Config& c) -> auto& { return c.diffusion.steps; });
    m["diffusion.t_diff"] = bind("re-noising time shift", [](Config& c) -> auto& { return c.diffusion.t_diff; });
    m["label.scale_s"] = bind("label latent scale s", [](Config& c) -> auto& { return c.label.scale_s; });
    m["label.latent_channels"] = bind("label latent channels D_lab", [](Config& c) -> auto& { return c.label.latent_channels; });
    Field mode;
    mode.doc = "re-encoding of predictions: hard | soft";
    mode.set = [](Config& c, const std::string& v) {
      if (v == "hard") {
        c.label.reencode_mode = ReencodeMode::kHard;
      } else if (v == "soft") {
        c.label.reencode_mode = ReencodeMode::kSoft;
      } else {
        throw ParameterError("label.reencode_mode must be hard or soft");
      }
    };
    mode.get = [](const Config& c) -> std::string {
      return c.label.reencode_mode == ReencodeMode::kHard ? "hard" : "soft";
    };
    m["label.reencode_mode"] = mode;
    m["proto.K"] = bind("prototypes per class", [](Config& c) -> auto& { return c.proto.K; });
    m["proto.tau"] = bind("contrastive temperature", [](Config& c) -> auto& { return c.proto.tau; });
    m["proto.mu"] = bind("prototype EMA momentum", [](Config& c) -> auto& { return c.proto.mu; });
    m["proto.dim"] = bind("projected embedding size D_proj", [](Config& c) -> auto& { return c.proto.dim; });
    m["proto.max_pixels"] = bind("contrastive pixels per image", [](Config& c) -> auto& { return c.proto.max_pixels; });
    m["proto.seed"] = bind("prototype initialization seed", [](Config& c) -> auto& { return c.proto.seed; });
    m["proto.use_pseudo"] = bind("pseudo pixels join contrastive terms", [](Config& c) -> auto& { return c.proto.use_pseudo; });
    m["backbone.kind"] = bind("backbone family (rescnn)", [](Config& c) -> auto& { return c.backbone.kind; });
    m["backbone.channels"] = bind("feature channels D_ch", [](Config& c) -> auto& { return c.backbone.channels; });
    m["backbone.levels"] = bind("feature levels N", [](Config& c) -> auto& { return c.backbone.levels; });
    m["backbone.stride"] = bind("feature stride (power of two)", [](Config& c) -> auto& { return c.backbone.stride; });
    m["decoder.blocks"] = bind("prediction-branch conv blocks", [](Config& c) -> auto& { return c.decoder.blocks; });
    m["decoder.time_embed_dim"] = bind("sinusoidal time embedding size", [](Config& c) -> auto& { return c.decoder.time_embed_dim; });
    m["train.iterations"] = bind("optimizer steps", [](Config& c) -> auto& { return c.train.iterations; });
    m["train.batch_size"] = bind("samples per step", [](Config& c) -> auto& { return c.train.batch_size; });
    m["train.lr"] = bind("initial learning rate", [](Config& c) -> auto& { return c.train.lr; });
    m["train.weight_decay"] = bind("L2 weight decay", [](Config& c) -> auto& { return c.train.weight_decay; });
    m["train.poly_power"] = bind("polynomial LR decay power", [](Config& c) -> auto& { return c.train.poly_power; });
    m["train.beta1"] = bind("Adam first-moment decay", [](Config& c) -> auto& { return c.train.beta1; });
    m["train.beta2"] = bind("Adam second-moment decay", [](Config& c) -> auto& { return c.train.beta2; });
    m["train.lambda_aux"] = bind("auxiliary CE weight", [](Config& c) -> auto& { return c.train.lambda_aux; });
    m["train.lambda_inter"] = bind("inter-class contrastive weight", [](Config& c) -> auto& { return c.train.lambda_inter; });
    m["train.lambda_intra"] = bind("intra-class compactness weight", [](Config& c) -> auto& { return c.train.lambda_intra; });
    m["train.lambda_pseudo"] = bind("CE weight of pseudo-labelled pixels", [](Config& c) -> auto& { return c.train.lambda_pseudo; });
    m["train.gt_ratio"] = bind("fraction of each batch drawn from the GT pool", [](Config& c) -> auto& { return c.train.gt_ratio; });
    m["train.seed"] = bind("master seed (PROTODIFF_SEED overrides)", [](Config& c) -> auto& { return c.train.seed; });
    m["train.checkpoint_every"] = bind("checkpoint period in steps, 0 = off", [](Config& c) -> auto& { return c.train.checkpoint_every; });
    m["train.log_every"] = bind("metrics log period in steps", [](Config& c) -> auto& { return c.train.log_every; });
    m["data.root"] = bind("dataset root directory", [](Config& c) -> auto& { return c.data.root; });
    m["data.train_split"] = bind("training split name", [](Config& c) -> auto& { return c.data.train_split; });
    m["data.val_split"] = bind("validation split name", [](Config& c) -> auto& { return c.data.val_split; });
    m["data.num_classes"] = bind("semantic classes incl. background", [](Config& c) -> auto& { return c.data.num_classes; });
    return m;
  }();
  return fields;
}

}  // namespace

void Config::set(const std::string& key, const std::string& value) {
  const auto& reg = registry();
  auto it = reg.find(key);
  if (it == reg.end()) throw ParameterError("unknown config key '" + key + "'");
  try {
    it->second.set(*this, value);
  } catch (const ParameterError& e) {
    throw ParameterError("config key '" + key + "': " + e.what());
  }
}

std::string Config::get(const std::string& key) const {
  const auto& reg = registry();
  auto it = reg.find(key);
  if (it == reg.end()) throw ParameterError("unknown config key '" + key + "'");
  return it->second.get(*this);
}

void Config::validate() const {
  if (diffusion.T < 1) throw ParameterError("diffusion.T must be positive");
  if (diffusion.steps < 1 || diffusion.steps > diffusion.T) {
    throw ParameterError("diffusion.steps must lie in [1, diffusion.T]");
  }
  if (diffusion.t_diff < 0) throw ParameterError("diffusion.t_diff must be nonnegative");
  if (data.num_classes < 2) throw ParameterError("data.num_classes must be at least 2");
  if (data.num_classes > 256) throw ParameterError("data.num_classes must fit in 8 bits");
  if (train.iterations < 1) throw ParameterError("train.iterations must be positive");
  if (train.batch_size < 1) throw ParameterError("train.batch_size must be positive");
  if (!(train.lr > 0.0)) throw ParameterError("train.lr must be positive");
  for (double w : {train.lambda_aux, train.lambda_inter, train.lambda_intra, train.lambda_pseudo,
                   train.weight_decay}) {
    if (!(w >= 0.0)) throw ParameterError("loss weights and weight decay must be nonnegative");
  }
  if (!(train.gt_ratio >= 0.0 && train.gt_ratio <= 1.0)) {
    throw ParameterError("train.gt_ratio must lie in [0, 1]");
  }
  if (!(proto.tau > 0.0)) throw ParameterError("proto.tau must be positive");
  if (!(proto.mu >= 0.0 && proto.mu < 1.0)) throw ParameterError("proto.mu must lie in [0, 1)");
  if (proto.K < 1) throw ParameterError("proto.K must be at least 1");
  if (train.log_every < 1) throw ParameterError("train.log_every must be positive");
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    for (const auto& [name, field] : registry()) out.push_back({name, field.doc});
    return out;
  }();
  return keys;
}

Config parse_config(const std::string& text) {
  Config config;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParameterError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    config.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return config;
}

void apply_env_overrides(Config& config) {
  if (const char* seed = std::getenv("PROTODIFF_SEED"); seed != nullptr && *seed != '\0') {
    config.set("train.seed", seed);
  }
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  Config config = parse_config(buffer.str());
  apply_env_overrides(config);
  config.validate();
  return config;
}

std::string to_text(const Config& config) {
  std::ostringstream os;
  for (const auto& [name, field] : registry()) {
    os << "# " << field.doc << "\n" << name << " = " << field.get(config) << "\n";
  }
  return os.str();
}

}  // namespace protodiff
