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

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dishwx/error.hpp"
#include "dishwx/hash.hpp"

namespace dishwx {

/// 8-bit interleaved raster, RGB or RGBA, row-major.
class Image {
 public:
  Image() = default;
  Image(int width, int height, int channels, std::uint8_t fill = 0) { reset(width, height, channels, fill); }
  Image(int width, int height, int channels, std::vector<std::uint8_t> data)
      : width_(width), height_(height), channels_(channels), data_(std::move(data)) {
    validate();
  }

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  bool empty() const { return data_.empty(); }
  bool has_alpha() const { return channels_ == 4; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }

  std::uint8_t* pixel(int x, int y) { return data_.data() + offset(x, y); }
  const std::uint8_t* pixel(int x, int y) const { return data_.data() + offset(x, y); }
  std::uint8_t& at(int x, int y, int c) { return data_[offset(x, y) + c]; }
  std::uint8_t at(int x, int y, int c) const { return data_[offset(x, y) + c]; }

  std::span<std::uint8_t> bytes() { return data_; }
  std::span<const std::uint8_t> bytes() const { return data_; }

  std::string content_hash() const {
    Fnv1a64 h;
    const int dims[3] = {width_, height_, channels_};
    h.update_values(std::span<const int>(dims));
    h.update_values(bytes());
    return hex64(h.digest());
  }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  void reset(int width, int height, int channels, std::uint8_t fill) {
    width_ = width;
    height_ = height;
    channels_ = channels;
    if (width < 1 || height < 1) throw Error(ErrorCode::InvalidDimensions, "image dimensions must be >= 1");
    if (channels != 3 && channels != 4) throw Error(ErrorCode::InvalidImage, "channels must be 3 or 4");
    data_.assign(pixel_count() * channels, fill);
  }
  void validate() const {
    if (width_ < 1 || height_ < 1) throw Error(ErrorCode::InvalidDimensions, "image dimensions must be >= 1");
    if (channels_ != 3 && channels_ != 4) throw Error(ErrorCode::InvalidImage, "channels must be 3 or 4");
    if (data_.size() != pixel_count() * channels_)
      throw Error(ErrorCode::InvalidImage, "data length does not match width*height*channels");
  }
  std::size_t offset(int x, int y) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_;
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<std::uint8_t> data_;
};

/// One boolean per pixel, stored as bytes {0,1}.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int width, int height, bool value = false) : width_(width), height_(height) {
    if (width < 1 || height < 1) throw Error(ErrorCode::InvalidDimensions, "mask dimensions must be >= 1");
    bits_.assign(static_cast<std::size_t>(width) * height, value ? 1 : 0);
  }

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return bits_.empty(); }
  bool get(int x, int y) const { return bits_[static_cast<std::size_t>(y) * width_ + x] != 0; }
  void set(int x, int y, bool v) { bits_[static_cast<std::size_t>(y) * width_ + x] = v ? 1 : 0; }

  std::size_t popcount() const {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
  }
  bool matches(const Image& img) const { return img.width() == width_ && img.height() == height_; }

  std::span<const std::uint8_t> bits() const { return bits_; }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> bits_;
};

struct BoundingBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // inclusive-exclusive: [x0,x1) x [y0,y1)
  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

inline std::optional<BoundingBox> bounding_box(const BinaryMask& m) {
  int x0 = m.width(), y0 = m.height(), x1 = -1, y1 = -1;
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x)
      if (m.get(x, y)) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
  if (x1 < 0) return std::nullopt;
  return BoundingBox{x0, y0, x1 + 1, y1 + 1};
}

// ---------------------------------------------------------------------------
// Label vocabulary

enum class DishCondition { Snow, Wet, Normal };
enum class BackgroundCondition { Snow, Sunny, Cloudy, Rain };
enum class Split { Train, Val, Test };

inline constexpr std::array<BackgroundCondition, 4> kAllBackgrounds = {
    BackgroundCondition::Snow, BackgroundCondition::Sunny, BackgroundCondition::Cloudy,
    BackgroundCondition::Rain};

constexpr std::string_view to_string(DishCondition c) {
  switch (c) {
    case DishCondition::Snow: return "snow";
    case DishCondition::Wet: return "wet";
    case DishCondition::Normal: return "normal";
  }
  return "?";
}
constexpr std::string_view to_string(BackgroundCondition c) {
  switch (c) {
    case BackgroundCondition::Snow: return "snow";
    case BackgroundCondition::Sunny: return "sunny";
    case BackgroundCondition::Cloudy: return "cloudy";
    case BackgroundCondition::Rain: return "rain";
  }
  return "?";
}
constexpr std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

inline DishCondition parse_dish_condition(std::string_view s) {
  if (s == "snow") return DishCondition::Snow;
  if (s == "wet") return DishCondition::Wet;
  if (s == "normal") return DishCondition::Normal;
  throw Error(ErrorCode::UnknownClassLabel, "unknown dish condition '" + std::string(s) + "'");
}
inline BackgroundCondition parse_background_condition(std::string_view s) {
  if (s == "snow") return BackgroundCondition::Snow;
  if (s == "sunny") return BackgroundCondition::Sunny;
  if (s == "cloudy") return BackgroundCondition::Cloudy;
  if (s == "rain") return BackgroundCondition::Rain;
  throw Error(ErrorCode::UnknownClassLabel, "unknown background condition '" + std::string(s) + "'");
}
inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw Error(ErrorCode::MalformedManifest, "unknown split '" + std::string(s) + "'");
}

/// One forged (or collected) sample as recorded in a dataset manifest.
struct LabeledSample {
  std::string image_path;  // relative to the manifest's directory
  DishCondition dish_condition = DishCondition::Normal;
  BackgroundCondition background_condition = BackgroundCondition::Sunny;
  Split split = Split::Train;
  std::string source_cutout_id;
  int combination_index = 0;
  std::uint64_t rng_stream_id = 0;
  std::string annotation_path;  // empty when no annotation was written
  std::string preprocessed_by;  // non-empty once background removal ran

  friend bool operator==(const LabeledSample&, const LabeledSample&) = default;
};

}  // namespace dishwx
