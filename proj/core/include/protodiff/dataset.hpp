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

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "protodiff/image_io.hpp"
#include "protodiff/label_codec.hpp"
#include "protodiff/tensor.hpp"

namespace protodiff {

struct ManifestEntry {
  std::filesystem::path image;
  std::optional<std::filesystem::path> mask;
  LabelSource source = LabelSource::kGroundTruth;
};

// Layout: <root>/<split>/images/*.png with same-named files in masks/
// (ground truth) and/or pseudo_masks/ (pseudo labels). An image with both
// yields two entries.
struct DatasetManifest {
  std::filesystem::path root;
  std::string split;
  int num_classes = 0;
  std::vector<ManifestEntry> entries;
};

// Entries come out in lexicographic filename order, GT before pseudo for the
// same image. Every mask is opened and checked against num_classes.
DatasetManifest load_dataset(const std::filesystem::path& root, const std::string& split,
                             int num_classes);

// Lists *.png files of a directory in lexicographic order (missing dir: empty).
std::vector<std::filesystem::path> list_pngs(const std::filesystem::path& dir);

struct SegSample {
  std::string name;
  RgbImage rgb;
  Tensor image;   // (3, 1, H, W) in [-1, 1]
  LabelMap label;  // carries the source tag
};

std::vector<SegSample> load_samples(const DatasetManifest& manifest);

}  // namespace protodiff
