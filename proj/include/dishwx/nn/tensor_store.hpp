/* Copyright 2026 The dishwx Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

// Portable named-tensor container used for backbone weights and classifier
// checkpoints. Layout (little-endian):
//
//   char[8]  magic "DSHWXT01"
//   u32      tensor count
//   per tensor:
//     u32 name length, name bytes
//     u32 ndim, i64 dims[ndim]
//     f32 values[prod(dims)]

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "dishwx/error.hpp"

namespace dishwx::nn {

struct NamedTensor {
  std::vector<std::int64_t> shape;
  std::vector<float> values;

  std::int64_t numel() const {
    return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
  }
};

class TensorStore {
 public:
  static constexpr char kMagic[8] = {'D', 'S', 'H', 'W', 'X', 'T', '0', '1'};

  void put(const std::string& name, std::vector<std::int64_t> shape, std::vector<float> values) {
    NamedTensor t{std::move(shape), std::move(values)};
    if (t.numel() != static_cast<std::int64_t>(t.values.size()))
      throw Error(ErrorCode::MalformedWeights, name + ": value count does not match shape");
    tensors_[name] = std::move(t);
  }

  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }

  const NamedTensor& get(const std::string& name) const {
    const auto it = tensors_.find(name);
    if (it == tensors_.end()) throw Error(ErrorCode::MalformedWeights, "missing tensor " + name);
    return it->second;
  }

  /// Returns the values of `name`, checking the element count.
  const std::vector<float>& values(const std::string& name, std::int64_t expected_numel) const {
    const auto& t = get(name);
    if (t.numel() != expected_numel)
      throw Error(ErrorCode::MalformedWeights, name + ": expected " + std::to_string(expected_numel) +
                                                   " values, found " + std::to_string(t.numel()));
    return t.values;
  }

  const std::map<std::string, NamedTensor>& tensors() const { return tensors_; }

  void write(const std::string& path) const {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::MalformedWeights, "cannot write " + path);
    out.write(kMagic, 8);
    put_u32(out, static_cast<std::uint32_t>(tensors_.size()));
    for (const auto& [name, t] : tensors_) {
      put_u32(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
      for (auto d : t.shape) out.write(reinterpret_cast<const char*>(&d), sizeof(d));
      out.write(reinterpret_cast<const char*>(t.values.data()),
                static_cast<std::streamsize>(t.values.size() * sizeof(float)));
    }
  }

  static TensorStore read(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::MissingPretrainedWeights, "cannot open weights file " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0) throw Error(ErrorCode::MalformedWeights, path + ": bad magic");
    TensorStore s;
    const std::uint32_t count = get_u32(in, path);
    for (std::uint32_t i = 0; i < count; ++i) {
      const std::uint32_t len = get_u32(in, path);
      if (len > 4096) throw Error(ErrorCode::MalformedWeights, path + ": implausible name length");
      std::string name(len, '\0');
      in.read(name.data(), len);
      const std::uint32_t ndim = get_u32(in, path);
      if (ndim > 8) throw Error(ErrorCode::MalformedWeights, path + ": implausible rank");
      NamedTensor t;
      t.shape.resize(ndim);
      for (auto& d : t.shape) in.read(reinterpret_cast<char*>(&d), sizeof(d));
      const auto n = t.numel();
      if (!in || n < 0 || n > (std::int64_t{1} << 31)) throw Error(ErrorCode::MalformedWeights, path + ": bad shape");
      t.values.resize(static_cast<std::size_t>(n));
      in.read(reinterpret_cast<char*>(t.values.data()), static_cast<std::streamsize>(n * sizeof(float)));
      if (!in) throw Error(ErrorCode::MalformedWeights, path + ": truncated tensor " + name);
      s.tensors_[name] = std::move(t);
    }
    return s;
  }

 private:
  static void put_u32(std::ofstream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
  static std::uint32_t get_u32(std::ifstream& in, const std::string& path) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    if (!in) throw Error(ErrorCode::MalformedWeights, path + ": truncated");
    return v;
  }

  std::map<std::string, NamedTensor> tensors_;
};

}  // namespace dishwx::nn
