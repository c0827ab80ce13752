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


#include "protodiff/dataset.hpp"

#include <algorithm>

#include "protodiff/errors.hpp"

namespace protodiff {

namespace fs = std::filesystem;

std::vector<fs::path> list_pngs(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });
  return out;
}

DatasetManifest load_dataset(const fs::path& root, const std::string& split, int num_classes) {
  DatasetManifest manifest;
  manifest.root = root;
  manifest.split = split;
  manifest.num_classes = num_classes;
  const fs::path base = root / split;
  for (const fs::path& image : list_pngs(base / "images")) {
    const fs::path gt = base / "masks" / image.filename();
    const fs::path pseudo = base / "pseudo_masks" / image.filename();
    const bool has_gt = fs::exists(gt);
    const bool has_pseudo = fs::exists(pseudo);
    if (!has_gt && !has_pseudo) {
      throw ManifestError("no mask or pseudo mask for image " + image.string());
    }
    if (has_gt) {
      (void)read_mask_png(gt, num_classes);
      manifest.entries.push_back({image, gt, LabelSource::kGroundTruth});
    }
    if (has_pseudo) {
      (void)read_mask_png(pseudo, num_classes, LabelSource::kPseudo);
      manifest.entries.push_back({image, pseudo, LabelSource::kPseudo});
    }
  }
  return manifest;
}

std::vector<SegSample> load_samples(const DatasetManifest& manifest) {
  std::vector<SegSample> samples;
  samples.reserve(manifest.entries.size());
  for (const ManifestEntry& entry : manifest.entries) {
    SegSample s;
    s.name = entry.image.filename().string();
    s.rgb = read_rgb_png(entry.image);
    s.image = image_to_tensor(s.rgb);
    if (!entry.mask) throw ManifestError("entry without mask: " + entry.image.string());
    s.label = read_mask_png(*entry.mask, manifest.num_classes, entry.source);
    if (s.label.height != s.rgb.height || s.label.width != s.rgb.width) {
      throw ManifestError("mask size differs from image size: " + entry.mask->string());
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace protodiff
