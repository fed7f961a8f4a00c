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
#include <cmath>
#include <cstdint>
#include <numbers>

#include "dishwx/error.hpp"
#include "dishwx/image.hpp"

namespace dishwx {

namespace detail {

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

// Bilinear sample at continuous pixel coordinates (pixel centers at integers).
// Out-of-range taps are clamped to the border when `clamp_edges`, otherwise
// they read as zero in every channel.
inline void sample_bilinear(const Image& src, double sx, double sy, bool clamp_edges, double* out) {
  const int c = src.channels();
  const int x0 = static_cast<int>(std::floor(sx));
  const int y0 = static_cast<int>(std::floor(sy));
  const double fx = sx - x0;
  const double fy = sy - y0;
  for (int k = 0; k < c; ++k) out[k] = 0.0;
  const int xs[2] = {x0, x0 + 1};
  const int ys[2] = {y0, y0 + 1};
  const double wx[2] = {1.0 - fx, fx};
  const double wy[2] = {1.0 - fy, fy};
  for (int j = 0; j < 2; ++j) {
    for (int i = 0; i < 2; ++i) {
      const double w = wx[i] * wy[j];
      if (w == 0.0) continue;
      int x = xs[i], y = ys[j];
      if (clamp_edges) {
        x = std::clamp(x, 0, src.width() - 1);
        y = std::clamp(y, 0, src.height() - 1);
      } else if (x < 0 || y < 0 || x >= src.width() || y >= src.height()) {
        continue;
      }
      const std::uint8_t* p = src.pixel(x, y);
      for (int k = 0; k < c; ++k) out[k] += w * p[k];
    }
  }
}

}  // namespace detail

/// Bilinear resize with half-pixel centers. Same-size resize returns an
/// identical copy.
inline Image resize(const Image& img, int w, int h) {
  if (w < 1 || h < 1) throw Error(ErrorCode::InvalidDimensions, "resize target must be >= 1x1");
  if (w == img.width() && h == img.height()) return img;
  Image out(w, h, img.channels());
  const double sx = static_cast<double>(img.width()) / w;
  const double sy = static_cast<double>(img.height()) / h;
  double acc[4];
  for (int y = 0; y < h; ++y) {
    const double fy = (y + 0.5) * sy - 0.5;
    for (int x = 0; x < w; ++x) {
      const double fx = (x + 0.5) * sx - 0.5;
      detail::sample_bilinear(img, fx, fy, true, acc);
      std::uint8_t* p = out.pixel(x, y);
      for (int k = 0; k < img.channels(); ++k) p[k] = detail::to_byte(acc[k]);
    }
  }
  return out;
}

/// Largest centered square (or the requested aspect) crop.
inline Image center_crop(const Image& img, int w, int h) {
  if (w < 1 || h < 1 || w > img.width() || h > img.height())
    throw Error(ErrorCode::InvalidDimensions, "crop must fit inside the image");
  const int x0 = (img.width() - w) / 2;
  const int y0 = (img.height() - h) / 2;
  Image out(w, h, img.channels());
  for (int y = 0; y < h; ++y)
    std::copy_n(img.pixel(x0, y0 + y), static_cast<std::size_t>(w) * img.channels(), out.pixel(0, y));
  return out;
}

/// Center-crops to the target aspect ratio, then resizes.
inline Image crop_and_resize(const Image& img, int w, int h) {
  const double target = static_cast<double>(w) / h;
  int cw = img.width(), ch = img.height();
  if (static_cast<double>(cw) / ch > target)
    cw = std::max(1, static_cast<int>(std::lround(ch * target)));
  else
    ch = std::max(1, static_cast<int>(std::lround(cw / target)));
  return resize(center_crop(img, cw, ch), w, h);
}

inline Image to_rgb(const Image& img) {
  if (!img.has_alpha()) return img;
  Image out(img.width(), img.height(), 3);
  for (std::size_t i = 0; i < img.pixel_count(); ++i)
    for (int k = 0; k < 3; ++k) out.bytes()[i * 3 + k] = img.bytes()[i * 4 + k];
  return out;
}

inline Image to_rgba(const Image& img) {
  if (img.has_alpha()) return img;
  Image out(img.width(), img.height(), 4, 255);
  for (std::size_t i = 0; i < img.pixel_count(); ++i)
    for (int k = 0; k < 3; ++k) out.bytes()[i * 4 + k] = img.bytes()[i * 3 + k];
  return out;
}

/// Rotates counter-clockwise by `angle_deg` about the image center and scales
/// by `scale`. The canvas grows to hold the full rotated extent; uncovered
/// pixels are fully transparent. Multiples of 90 degrees use exact
/// trigonometry so quarter turns are lossless permutations.
inline Image rotate_and_scale(const Image& img, double angle_deg, double scale) {
  if (!(scale > 0.0)) throw Error(ErrorCode::NonPositiveScale, "scale must be > 0");
  if (!img.has_alpha()) throw Error(ErrorCode::InvalidImage, "rotate_and_scale expects an RGBA image");

  double c, s;
  const double quarters = angle_deg / 90.0;
  if (quarters == std::round(quarters)) {
    static constexpr double kCos[4] = {1, 0, -1, 0};
    static constexpr double kSin[4] = {0, 1, 0, -1};
    const long q = ((std::lround(quarters) % 4) + 4) % 4;
    c = kCos[q];
    s = kSin[q];
  } else {
    const double rad = angle_deg * std::numbers::pi / 180.0;
    c = std::cos(rad);
    s = std::sin(rad);
  }

  const double sw = img.width() * scale;
  const double sh = img.height() * scale;
  const auto extent = [](double v) { return std::max(1, static_cast<int>(std::ceil(v - 1e-9))); };
  const int out_w = extent(std::abs(sw * c) + std::abs(sh * s));
  const int out_h = extent(std::abs(sw * s) + std::abs(sh * c));

  Image out(out_w, out_h, 4, 0);
  const double ocx = out_w / 2.0, ocy = out_h / 2.0;
  const double icx = img.width() / 2.0, icy = img.height() / 2.0;
  double acc[4];
  for (int v = 0; v < out_h; ++v) {
    for (int u = 0; u < out_w; ++u) {
      // Output pixel center relative to the canvas center, in image axes
      // (y down). Counter-clockwise on screen, so invert with that sign.
      const double dx = u + 0.5 - ocx;
      const double dy = v + 0.5 - ocy;
      const double rx = (c * dx - s * dy) / scale;
      const double ry = (s * dx + c * dy) / scale;
      const double sx = rx + icx - 0.5;
      const double sy = ry + icy - 0.5;
      if (sx <= -1.0 || sy <= -1.0 || sx >= img.width() || sy >= img.height()) continue;
      detail::sample_bilinear(img, sx, sy, false, acc);
      std::uint8_t* p = out.pixel(u, v);
      for (int k = 0; k < 4; ++k) p[k] = detail::to_byte(acc[k]);
    }
  }
  return out;
}

}  // namespace dishwx
