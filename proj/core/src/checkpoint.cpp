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


#include "protodiff/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "protodiff/errors.hpp"

namespace protodiff {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

namespace {

constexpr std::array<char, 8> kMagic = {'P', 'D', 'C', 'K', 'P', 'T', '\0', '\0'};

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw IoError("cannot write checkpoint " + path.string());
  }
  template <typename T>
  void pod(const T& v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  template <typename T>
  void values(const std::vector<T>& v) {
    pod<std::uint64_t>(v.size());
    out_.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(T)));
  }
  void raw(const char* p, std::size_t n) { out_.write(p, static_cast<std::streamsize>(n)); }
  void finish() {
    out_.flush();
    if (!out_) throw IoError("checkpoint write failed");
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : in_(path, std::ios::binary) {
    if (!in_) throw IoError("cannot read checkpoint " + path.string());
  }
  template <typename T>
  T pod() {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    check();
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    if (n > (1ull << 32)) throw IoError("checkpoint: corrupt string length");
    std::string s(n, '\0');
    in_.read(s.data(), static_cast<std::streamsize>(n));
    check();
    return s;
  }
  template <typename T>
  std::vector<T> values() {
    const auto n = pod<std::uint64_t>();
    if (n > (1ull << 34) / sizeof(T)) throw IoError("checkpoint: corrupt array length");
    std::vector<T> v(n);
    in_.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)));
    check();
    return v;
  }
  void raw(char* p, std::size_t n) {
    in_.read(p, static_cast<std::streamsize>(n));
    check();
  }

 private:
  void check() {
    if (!in_) throw IoError("checkpoint: unexpected end of file");
  }
  std::ifstream in_;
};

}  // namespace

const NamedArray& CheckpointData::find(const std::string& name) const {
  for (const NamedArray& a : arrays) {
    if (a.name == name) return a;
  }
  throw StateError("checkpoint has no array named '" + name + "'");
}

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data) {
  Writer w(path);
  w.raw(kMagic.data(), kMagic.size());
  w.pod(data.version);
  w.str(data.config_text);
  w.str(data.rng_state);
  w.pod(data.iteration);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(data.arrays.size()));
  for (const NamedArray& a : data.arrays) {
    w.str(a.name);
    for (int d : {a.shape.channels, a.shape.batch, a.shape.height, a.shape.width}) w.pod<std::int32_t>(d);
    if (const auto* f = std::get_if<std::vector<float>>(&a.data)) {
      w.pod<std::uint8_t>(0);
      w.values(*f);
    } else {
      w.pod<std::uint8_t>(1);
      w.values(std::get<std::vector<double>>(a.data));
    }
  }
  w.finish();
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
  Reader r(path);
  std::array<char, 8> magic{};
  r.raw(magic.data(), magic.size());
  if (magic != kMagic) throw IoError(path.string() + " is not a protodiff checkpoint");
  CheckpointData data;
  data.version = r.pod<std::uint32_t>();
  if (data.version != CheckpointData::kVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(data.version));
  }
  data.config_text = r.str();
  data.rng_state = r.str();
  data.iteration = r.pod<std::uint64_t>();
  const auto count = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name = r.str();
    a.shape.channels = r.pod<std::int32_t>();
    a.shape.batch = r.pod<std::int32_t>();
    a.shape.height = r.pod<std::int32_t>();
    a.shape.width = r.pod<std::int32_t>();
    const auto dtype = r.pod<std::uint8_t>();
    if (dtype == 0) {
      a.data = r.values<float>();
    } else if (dtype == 1) {
      a.data = r.values<double>();
    } else {
      throw IoError("checkpoint: unknown dtype in array " + a.name);
    }
    data.arrays.push_back(std::move(a));
  }
  return data;
}

}  // namespace protodiff
