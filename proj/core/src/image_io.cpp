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


#include "protodiff/image_io.hpp"

#include <png.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <memory>

#include "protodiff/errors.hpp"

namespace protodiff {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f != nullptr) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open " + path.string());
  return f;
}

[[noreturn]] void png_error_handler(png_structp, png_const_charp message) {
  throw IoError(std::string("libpng: ") + message);
}

void png_warning_handler(png_structp, png_const_charp) {}

class PngReader {
 public:
  explicit PngReader(const std::filesystem::path& path) : file_(open_file(path, "rb")), path_(path) {
    std::array<png_byte, 8> sig{};
    if (std::fread(sig.data(), 1, sig.size(), file_.get()) != sig.size() ||
        png_sig_cmp(sig.data(), 0, sig.size()) != 0) {
      throw IoError(path.string() + " is not a PNG file");
    }
    png_ = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_handler,
                                  png_warning_handler);
    info_ = png_create_info_struct(png_);
    if (png_ == nullptr || info_ == nullptr) throw IoError("libpng allocation failed");
    png_init_io(png_, file_.get());
    png_set_sig_bytes(png_, 8);
    png_read_info(png_, info_);
  }
  ~PngReader() { png_destroy_read_struct(&png_, &info_, nullptr); }
  PngReader(const PngReader&) = delete;
  PngReader& operator=(const PngReader&) = delete;

  png_structp png() { return png_; }
  png_infop info() { return info_; }
  [[nodiscard]] int width() const { return static_cast<int>(png_get_image_width(png_, info_)); }
  [[nodiscard]] int height() const { return static_cast<int>(png_get_image_height(png_, info_)); }

  std::vector<std::uint8_t> read_rows(std::size_t row_bytes) {
    png_read_update_info(png_, info_);
    if (png_get_rowbytes(png_, info_) != row_bytes) {
      throw IoError(path_.string() + ": unexpected PNG row layout");
    }
    std::vector<std::uint8_t> data(row_bytes * height());
    std::vector<png_bytep> rows(height());
    for (int y = 0; y < height(); ++y) rows[y] = data.data() + row_bytes * y;
    png_read_image(png_, rows.data());
    png_read_end(png_, nullptr);
    return data;
  }

 private:
  FilePtr file_;
  std::filesystem::path path_;
  png_structp png_ = nullptr;
  png_infop info_ = nullptr;
};

class PngWriter {
 public:
  explicit PngWriter(const std::filesystem::path& path) : file_(open_file(path, "wb")) {
    png_ = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_handler,
                                   png_warning_handler);
    info_ = png_create_info_struct(png_);
    if (png_ == nullptr || info_ == nullptr) throw IoError("libpng allocation failed");
    png_init_io(png_, file_.get());
  }
  ~PngWriter() { png_destroy_write_struct(&png_, &info_); }
  PngWriter(const PngWriter&) = delete;
  PngWriter& operator=(const PngWriter&) = delete;

  png_structp png() { return png_; }
  png_infop info() { return info_; }

  void write_rows(const std::uint8_t* data, int height, std::size_t row_bytes) {
    png_write_info(png_, info_);
    for (int y = 0; y < height; ++y) {
      png_write_row(png_, const_cast<png_bytep>(data + row_bytes * y));
    }
    png_write_end(png_, nullptr);
  }

 private:
  FilePtr file_;
  png_structp png_ = nullptr;
  png_infop info_ = nullptr;
};

}  // namespace

std::array<std::uint8_t, 3> class_color(int index) {
  static constexpr std::array<std::array<std::uint8_t, 3>, 8> kBase = {{{0, 0, 0},
                                                                        {230, 60, 60},
                                                                        {60, 200, 80},
                                                                        {70, 110, 240},
                                                                        {240, 200, 40},
                                                                        {200, 70, 220},
                                                                        {40, 210, 220},
                                                                        {250, 140, 40}}};
  if (index >= 0 && index < static_cast<int>(kBase.size())) return kBase[index];
  const auto v = static_cast<unsigned>(index);
  return {static_cast<std::uint8_t>((v * 97u) & 0xFF), static_cast<std::uint8_t>((v * 57u) & 0xFF),
          static_cast<std::uint8_t>((v * 181u) & 0xFF)};
}

RgbImage read_rgb_png(const std::filesystem::path& path) {
  PngReader reader(path);
  png_structp png = reader.png();
  png_infop info = reader.info();
  const int color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) {
    png_set_expand_gray_1_2_4_to_8(png);
    png_set_gray_to_rgb(png);
  }
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  RgbImage image;
  image.width = reader.width();
  image.height = reader.height();
  image.pixels = reader.read_rows(static_cast<std::size_t>(image.width) * 3);
  return image;
}

void write_rgb_png(const std::filesystem::path& path, const RgbImage& image) {
  if (image.pixels.size() != static_cast<std::size_t>(image.width) * image.height * 3) {
    throw ShapeError("write_rgb_png: pixel buffer does not match extent");
  }
  PngWriter writer(path);
  png_set_IHDR(writer.png(), writer.info(), image.width, image.height, 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  writer.write_rows(image.pixels.data(), image.height, static_cast<std::size_t>(image.width) * 3);
}

LabelMap read_mask_png(const std::filesystem::path& path, int num_classes, LabelSource source) {
  PngReader reader(path);
  png_structp png = reader.png();
  png_infop info = reader.info();
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (!(color == PNG_COLOR_TYPE_PALETTE || color == PNG_COLOR_TYPE_GRAY)) {
    throw ValidationError(path.string() + ": mask must be an indexed or 8-bit grayscale PNG");
  }
  if (depth < 8) png_set_packing(png);
  if (depth == 16) throw ValidationError(path.string() + ": 16-bit masks are not supported");
  LabelMap mask;
  mask.width = reader.width();
  mask.height = reader.height();
  mask.num_classes = num_classes;
  mask.source = source;
  const std::vector<std::uint8_t> raw = reader.read_rows(static_cast<std::size_t>(mask.width));
  mask.indices.assign(raw.begin(), raw.end());
  for (int v : mask.indices) {
    if (v >= num_classes) {
      throw ValidationError(path.string() + ": class index " + std::to_string(v) +
                            " >= num_classes " + std::to_string(num_classes));
    }
  }
  return mask;
}

void write_mask_png(const std::filesystem::path& path, const LabelMap& mask) {
  mask.validate();
  if (mask.num_classes > 256) throw ValidationError("write_mask_png: more than 256 classes");
  std::vector<std::uint8_t> raw(mask.indices.begin(), mask.indices.end());
  std::vector<png_color> palette(static_cast<std::size_t>(mask.num_classes));
  for (int c = 0; c < mask.num_classes; ++c) {
    const auto rgb = class_color(c);
    palette[c] = png_color{rgb[0], rgb[1], rgb[2]};
  }
  PngWriter writer(path);
  png_set_IHDR(writer.png(), writer.info(), mask.width, mask.height, 8, PNG_COLOR_TYPE_PALETTE,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_PLTE(writer.png(), writer.info(), palette.data(), static_cast<int>(palette.size()));
  writer.write_rows(raw.data(), mask.height, static_cast<std::size_t>(mask.width));
}

Tensor image_to_tensor(const RgbImage& image) {
  Tensor t(Shape{3, 1, image.height, image.width});
  const std::size_t plane = static_cast<std::size_t>(image.height) * image.width;
  for (std::size_t p = 0; p < plane; ++p) {
    for (int c = 0; c < 3; ++c) {
      t.data()[c * plane + p] = static_cast<float>(image.pixels[p * 3 + c]) / 127.5f - 1.0f;
    }
  }
  return t;
}

RgbImage overlay(const RgbImage& image, const LabelMap& mask, float alpha) {
  if (image.height != mask.height || image.width != mask.width) {
    throw ShapeError("overlay: image and mask sizes differ");
  }
  RgbImage out = image;
  for (std::size_t p = 0; p < mask.indices.size(); ++p) {
    const int c = mask.indices[p];
    if (c == 0) continue;
    const auto rgb = class_color(c);
    for (int k = 0; k < 3; ++k) {
      const float v = (1.0f - alpha) * image.pixels[p * 3 + k] + alpha * rgb[k];
      out.pixels[p * 3 + k] = static_cast<std::uint8_t>(std::lround(v));
    }
  }
  return out;
}

}  // namespace protodiff
