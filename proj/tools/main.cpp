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


#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "protodiff/config.hpp"
#include "protodiff/dataset.hpp"
#include "protodiff/errors.hpp"
#include "protodiff/image_io.hpp"
#include "protodiff/inference_sampler.hpp"
#include "protodiff/metrics.hpp"
#include "protodiff/synthetic.hpp"
#include "protodiff/training_engine.hpp"

namespace fs = std::filesystem;
using namespace protodiff;

namespace {

void print_miou(const MiouResult& r) {
  std::printf("mIoU %.4f\n", r.miou);
  for (std::size_t c = 0; c < r.iou.size(); ++c) {
    if (r.present[c]) {
      std::printf("  class %zu IoU %.4f\n", c, r.iou[c]);
    } else {
      std::printf("  class %zu absent\n", c);
    }
  }
}

int run_make_synthetic(const fs::path& out, SyntheticConfig cfg) {
  make_synthetic(out, cfg);
  std::printf("wrote %d train / %d val images to %s\n", cfg.n_train, cfg.n_val, out.c_str());
  return 0;
}

int run_train(const fs::path& config_path, const fs::path& out, const std::string& resume,
              bool evaluate_after, const std::vector<std::string>& overrides) {
  Config config = load_config(config_path);
  for (const std::string& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ParameterError("--set expects key=value, got " + kv);
    config.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  config.validate();

  const auto manifest = load_dataset(config.data.root, config.data.train_split, config.data.num_classes);
  std::vector<SegSample> gt;
  std::vector<SegSample> pseudo;
  for (SegSample& s : load_samples(manifest)) {
    (s.label.source == LabelSource::kGroundTruth ? gt : pseudo).push_back(std::move(s));
  }
  std::printf("train: %zu ground-truth, %zu pseudo-labelled samples\n", gt.size(), pseudo.size());

  fs::create_directories(out);
  {
    std::ofstream cfg_out(out / "config.cfg");
    cfg_out << to_text(config);
  }
  TrainingEngine engine(config, std::move(gt), std::move(pseudo));
  if (!resume.empty()) {
    engine.load_checkpoint(resume);
    std::printf("resumed at iteration %d\n", engine.iteration());
  }
  std::ofstream log(out / "metrics.jsonl", resume.empty() ? std::ios::trunc : std::ios::app);
  engine.train(&log, [&](const TrainingEngine& e) {
    char name[64];
    std::snprintf(name, sizeof(name), "checkpoint_%06d.bin", e.iteration());
    e.save_checkpoint(out / name);
  });
  engine.save_checkpoint(out / "checkpoint.bin");
  std::printf("saved %s\n", (out / "checkpoint.bin").c_str());

  if (evaluate_after) {
    const auto val = load_samples(
        load_dataset(config.data.root, config.data.val_split, config.data.num_classes));
    const TimeGrid grid = make_time_grid(config.diffusion.T, config.diffusion.steps,
                                         config.diffusion.t_diff);
    const auto report = evaluate(engine.model(), val, engine.schedule(), grid, config.train.seed,
                                 {config.label.reencode_mode, false});
    std::printf("val images %zu, %.3f s/image\n", val.size(), report.seconds_per_image);
    print_miou(report.miou);
  }
  return 0;
}

int run_infer(const fs::path& config_path, const fs::path& ckpt, const fs::path& images, const fs::path& out, int steps,
              int t_diff, std::uint64_t seed, bool soft, bool trace, bool stop_on_error) {
  Config config;
  auto model = load_model(read_checkpoint(ckpt), config);
  if (!config_path.empty()) {
    // Sampling settings come from the given config; the architecture always
    // comes from the checkpoint.
    const Config user = load_config(config_path);
    config.diffusion.steps = user.diffusion.steps;
    config.diffusion.t_diff = user.diffusion.t_diff;
    config.label.reencode_mode = user.label.reencode_mode;
  }
  if (steps > 0) config.diffusion.steps = steps;
  if (t_diff >= 0) config.diffusion.t_diff = t_diff;
  const NoiseSchedule schedule(config.diffusion.T, config.diffusion.s_c);
  const TimeGrid grid =
      make_time_grid(config.diffusion.T, config.diffusion.steps, config.diffusion.t_diff);
  const SamplerOptions options{soft ? ReencodeMode::kSoft : config.label.reencode_mode, trace};

  std::vector<InferenceInput> inputs;
  std::vector<RgbImage> rgbs;
  for (const fs::path& p : list_pngs(images)) {
    rgbs.push_back(read_rgb_png(p));
    inputs.push_back({p.filename().string(), image_to_tensor(rgbs.back())});
  }
  if (inputs.empty()) std::printf("no images found in %s\n", images.c_str());
  fs::create_directories(out / "overlays");
  const auto records = batch_infer(*model, inputs, schedule, grid, seed, options, stop_on_error);
  int failures = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const InferenceRecord& rec = records[i];
    if (!rec.result) {
      ++failures;
      std::fprintf(stderr, "%s: %s\n", rec.name.c_str(), rec.error.c_str());
      continue;
    }
    write_mask_png(out / rec.name, rec.result->prediction);
    write_rgb_png(out / "overlays" / rec.name, overlay(rgbs[i], rec.result->prediction));
    if (trace) {
      const fs::path dir = out / "trace" / fs::path(rec.name).stem();
      fs::create_directories(dir);
      std::ofstream steps_log(dir / "steps.txt");
      for (std::size_t s = 0; s < rec.result->trace.size(); ++s) {
        const TraceStep& step = rec.result->trace[s];
        LabelMap m = rec.result->prediction;
        m.indices = step.prediction;
        char name[64];
        std::snprintf(name, sizeof(name), "step%02zu_t%04d.png", s, step.t);
        write_mask_png(dir / name, m);
        steps_log << step.t << ' ' << step.t_next << ' ' << step.mean_abs_latent << '\n';
      }
    }
    std::printf("%s  %.3f s\n", rec.name.c_str(), rec.seconds);
  }
  return failures == 0 ? 0 : 3;
}

int run_eval(const fs::path& pred, const fs::path& gt, int classes) {
  ConfusionMatrix matrix(classes);
  int count = 0;
  for (const fs::path& g : list_pngs(gt)) {
    const fs::path p = pred / g.filename();
    if (!fs::exists(p)) throw EvaluationError("missing prediction for " + g.filename().string());
    matrix.add(read_mask_png(p, classes, LabelSource::kPseudo),
               read_mask_png(g, classes, LabelSource::kGroundTruth));
    ++count;
  }
  std::printf("images %d\n", count);
  print_miou(miou(matrix));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"protodiff: diffusion-based semi-supervised segmentation"};
  app.require_subcommand(1);

  SyntheticConfig syn;
  fs::path syn_out = "data";
  auto* make = app.add_subcommand("make-synthetic", "Generate the synthetic shapes dataset");
  make->add_option("--out", syn_out, "Dataset root")->capture_default_str();
  make->add_option("--train", syn.n_train, "Training images")->capture_default_str();
  make->add_option("--val", syn.n_val, "Validation images")->capture_default_str();
  make->add_option("--size", syn.image_size, "Image side in pixels")->capture_default_str();
  make->add_option("--classes", syn.num_classes, "Classes incl. background")->capture_default_str();
  make->add_option("--rho", syn.rho, "Pseudo-label disagreement rate")->capture_default_str();
  make->add_option("--labeled", syn.labeled_fraction, "Fraction of train with true masks")
      ->capture_default_str();
  make->add_option("--seed", syn.seed, "Generator seed")->capture_default_str();

  fs::path config_path;
  fs::path train_out = "run";
  std::string resume;
  bool eval_after = false;
  std::vector<std::string> overrides;
  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--config", config_path, "Configuration file")->required()->check(CLI::ExistingFile);
  train->add_option("--out", train_out, "Output directory")->capture_default_str();
  train->add_option("--resume", resume, "Checkpoint to resume from")->check(CLI::ExistingFile);
  train->add_option("--set", overrides, "Override a config key (key=value)");
  train->add_flag("--eval", eval_after, "Evaluate on the validation split afterwards");

  fs::path ckpt;
  fs::path images;
  fs::path infer_out = "predictions";
  int steps = 0;
  int t_diff = -1;
  std::uint64_t seed = 0;
  bool soft = false;
  bool trace = false;
  bool stop = false;
  fs::path infer_config;
  auto* infer = app.add_subcommand("infer", "Segment a directory of images");
  infer->add_option("--config", infer_config, "Config supplying sampling settings")
      ->check(CLI::ExistingFile);
  infer->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  infer->add_option("--images", images, "Directory of PNG images")->required();
  infer->add_option("--out", infer_out, "Output directory")->capture_default_str();
  infer->add_option("--steps", steps, "Sampling steps (default: from checkpoint)");
  infer->add_option("--t-diff", t_diff, "Re-noising shift (default: from checkpoint)");
  infer->add_option("--seed", seed, "Sampling seed")->capture_default_str();
  infer->add_flag("--soft", soft, "Soft re-encoding of intermediate predictions");
  infer->add_flag("--trace", trace, "Write the intermediate prediction of every step");
  infer->add_flag("--stop-on-error", stop, "Abort on the first failing image");

  fs::path pred_dir;
  fs::path gt_dir;
  int classes = 3;
  auto* eval = app.add_subcommand("eval", "Score predicted masks against ground truth");
  eval->add_option("--pred", pred_dir, "Predicted mask directory")->required();
  eval->add_option("--gt", gt_dir, "Ground-truth mask directory")->required();
  eval->add_option("--classes", classes, "Number of classes")->capture_default_str();

  auto* keys = app.add_subcommand("config-keys", "List configuration keys");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*make) return run_make_synthetic(syn_out, syn);
    if (*train) return run_train(config_path, train_out, resume, eval_after, overrides);
    if (*infer) return run_infer(infer_config, ckpt, images, infer_out, steps, t_diff, seed, soft, trace, stop);
    if (*eval) return run_eval(pred_dir, gt_dir, classes);
    if (*keys) {
      for (const ConfigKey& k : config_keys()) std::printf("%-24s %s\n", k.name.c_str(), k.doc.c_str());
      return 0;
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
