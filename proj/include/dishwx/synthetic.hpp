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

// Procedural stand-in imagery: weather-scene backgrounds and photos of a
// ground-terminal dish (reflector, feed arm, mount) under snow, wet or
// normal conditions, with exact per-pixel annotations. Used for fixtures,
// demos and the acceptance runs when no photo collection is available.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "dishwx/error.hpp"
#include "dishwx/image.hpp"
#include "dishwx/image_io.hpp"
#include "dishwx/rng.hpp"
#include "dishwx/segmenter/annotation.hpp"

namespace dishwx::synth {

inline constexpr int kPhotoWidth = 400;
inline constexpr int kPhotoHeight = 300;

/// Smooth lattice noise in [0,1], bilinear between hashed grid values.
class ValueNoise {
 public:
  ValueNoise(std::uint64_t seed, double cell) : seed_(seed), cell_(cell) {}

  double at(double x, double y) const {
    const double gx = x / cell_, gy = y / cell_;
    const auto ix = static_cast<std::int64_t>(std::floor(gx)), iy = static_cast<std::int64_t>(std::floor(gy));
    const double fx = smooth(gx - ix), fy = smooth(gy - iy);
    const double a = lattice(ix, iy), b = lattice(ix + 1, iy), c = lattice(ix, iy + 1), d = lattice(ix + 1, iy + 1);
    return (a * (1 - fx) + b * fx) * (1 - fy) + (c * (1 - fx) + d * fx) * fy;
  }

 private:
  static double smooth(double t) { return t * t * (3 - 2 * t); }
  double lattice(std::int64_t x, std::int64_t y) const {
    const auto h = splitmix64(seed_ ^ splitmix64(static_cast<std::uint64_t>(x) * 0x9E3779B97F4A7C15ULL ^
                                                 static_cast<std::uint64_t>(y)));
    return static_cast<double>(h >> 11) * 0x1.0p-53;
  }
  std::uint64_t seed_;
  double cell_;
};

namespace detail {

inline std::uint8_t clamp8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

inline void put(Image& img, int x, int y, double r, double g, double b) {
  if (x < 0 || y < 0 || x >= img.width() || y >= img.height()) return;
  std::uint8_t* p = img.pixel(x, y);
  p[0] = clamp8(r);
  p[1] = clamp8(g);
  p[2] = clamp8(b);
}

inline void blend(Image& img, int x, int y, double r, double g, double b, double a) {
  if (x < 0 || y < 0 || x >= img.width() || y >= img.height()) return;
  std::uint8_t* p = img.pixel(x, y);
  p[0] = clamp8(p[0] * (1 - a) + r * a);
  p[1] = clamp8(p[1] * (1 - a) + g * a);
  p[2] = clamp8(p[2] * (1 - a) + b * a);
}

inline void disc(Image& img, double cx, double cy, double rad, double r, double g, double b, double a) {
  for (int y = static_cast<int>(cy - rad); y <= static_cast<int>(cy + rad) + 1; ++y)
    for (int x = static_cast<int>(cx - rad); x <= static_cast<int>(cx + rad) + 1; ++x)
      if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= rad * rad) blend(img, x, y, r, g, b, a);
}

}  // namespace detail

/// Outdoor scene for a background condition, RGB.
inline Image render_background(BackgroundCondition cond, std::uint64_t seed, int w = kPhotoWidth,
                               int h = kPhotoHeight) {
  Rng rng(derive_stream(seed, {0xB6, static_cast<std::uint64_t>(cond)}));
  Image img(w, h, 3);
  const double horizon = h * rng.uniform(0.5, 0.72);
  const ValueNoise coarse(rng.next_u64(), 60.0), fine(rng.next_u64(), 6.0);

  struct Palette {
    double sky_top[3], sky_low[3], ground[3];
    double cloudiness, ground_noise;
  };
  Palette pal{};
  switch (cond) {
    case BackgroundCondition::Sunny:
      pal = {{70, 130, 220}, {165, 205, 245}, {90, 140, 60}, 0.15, 30};
      break;
    case BackgroundCondition::Cloudy:
      pal = {{140, 145, 155}, {190, 192, 198}, {95, 110, 85}, 0.8, 25};
      break;
    case BackgroundCondition::Rain:
      pal = {{70, 75, 85}, {110, 115, 125}, {55, 65, 60}, 0.9, 20};
      break;
    case BackgroundCondition::Snow:
      pal = {{175, 180, 190}, {210, 212, 218}, {232, 236, 242}, 0.7, 18};
      break;
  }
  const double jitter = rng.uniform(-15, 15);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double c[3];
      if (y < horizon) {
        const double t = y / horizon;
        const double cloud = std::clamp((coarse.at(x, y * 2.0) - (1 - pal.cloudiness)) * 2.0, 0.0, 1.0);
        for (int k = 0; k < 3; ++k) {
          const double sky = pal.sky_top[k] * (1 - t) + pal.sky_low[k] * t + jitter;
          const double cl = cond == BackgroundCondition::Sunny ? 240 : pal.sky_low[k] + 15;
          c[k] = sky * (1 - cloud) + cl * cloud;
        }
      } else {
        const double n = (coarse.at(x * 1.7, y * 1.7) - 0.5) * pal.ground_noise + (fine.at(x, y) - 0.5) * 12;
        for (int k = 0; k < 3; ++k) c[k] = pal.ground[k] + n + jitter * 0.5;
      }
      detail::put(img, x, y, c[0], c[1], c[2]);
    }
  }
  // Buildings along the horizon.
  const int nb = static_cast<int>(rng.below(4));
  for (int i = 0; i < nb; ++i) {
    const double bw = rng.uniform(0.08, 0.2) * w, bh = rng.uniform(0.08, 0.25) * h;
    const double bx = rng.uniform(0, w - bw);
    const double shade = rng.uniform(70, 150);
    const bool roof_snow = cond == BackgroundCondition::Snow;
    for (int y = static_cast<int>(horizon - bh); y < static_cast<int>(horizon); ++y)
      for (int x = static_cast<int>(bx); x < static_cast<int>(bx + bw); ++x) {
        const bool top = y < horizon - bh + 5;
        const double v = roof_snow && top ? 240 : shade;
        detail::put(img, x, y, v, v * 0.95, v * 0.9);
      }
  }
  if (cond == BackgroundCondition::Sunny)
    detail::disc(img, rng.uniform(0.1, 0.9) * w, rng.uniform(0.08, 0.25) * h, rng.uniform(12, 22), 255, 245, 200, 1.0);
  if (cond == BackgroundCondition::Rain) {
    const int streaks = 250 + static_cast<int>(rng.below(200));
    for (int i = 0; i < streaks; ++i) {
      const double x0 = rng.uniform(0, w), y0 = rng.uniform(0, h), len = rng.uniform(8, 20);
      for (int t = 0; t < static_cast<int>(len); ++t)
        detail::blend(img, static_cast<int>(x0 + t * 0.3), static_cast<int>(y0 + t), 200, 205, 215, 0.35);
    }
  }
  if (cond == BackgroundCondition::Snow) {
    const int flakes = 300 + static_cast<int>(rng.below(300));
    for (int i = 0; i < flakes; ++i)
      detail::disc(img, rng.uniform(0, w), rng.uniform(0, h), rng.uniform(0.6, 2.0), 250, 250, 252, 0.85);
  }
  return img;
}

struct DishScene {
  Image photo;       // RGB
  BinaryMask mask;   // dish pixels (reflector, feed arm, mount)
};

/// Draws one dish over `photo` in place and returns its mask.
inline BinaryMask draw_dish(Image& photo, DishCondition cond, Rng& rng) {
  const int w = photo.width(), h = photo.height();
  BinaryMask mask(w, h);
  const double base = std::min(w, h);
  const double R = rng.uniform(0.2, 0.3) * base;
  const double squash = rng.uniform(0.6, 0.95);
  const double tilt = rng.uniform(-25.0, 25.0) * std::numbers::pi / 180.0;
  const double cx = rng.uniform(R * 1.1, w - R * 1.1);
  const double cy = rng.uniform(R * 1.0, h - R * 1.7);
  const double ct = std::cos(tilt), st = std::sin(tilt);
  const double lx = rng.uniform(-0.7, 0.7), ly = -0.7;

  // Condition appearance.
  double gray = rng.uniform(175, 220);
  double tint[3] = {1.0, 1.0, 1.0};
  double gloss = 0.15;
  if (cond == DishCondition::Wet) {
    gray = rng.uniform(85, 130);
    tint[0] = 0.92;
    tint[2] = 1.12;
    gloss = 0.6;
  }
  const ValueNoise snow_field(rng.next_u64(), R * 0.35), sparkle(rng.next_u64(), 2.0), grime(rng.next_u64(), R * 0.2);
  const double coverage = rng.uniform(0.55, 0.95);
  const double snow_line = rng.uniform(-0.6, 0.2);

  auto shade_px = [&](int x, int y, double intensity, bool reflector, double u, double v) {
    double c[3];
    for (int k = 0; k < 3; ++k) c[k] = intensity * tint[k];
    c[0] += (grime.at(x, y) - 0.5) * 10;
    if (cond == DishCondition::Snow) {
      const double n = snow_field.at(x, y);
      const double vy = reflector ? v : -1.0;
      const bool snowy = n * 0.6 + (vy - snow_line) * 0.25 + coverage * 0.4 > 0.62 || (!reflector && n > 0.5);
      if (snowy) {
        const double s = 232 + (sparkle.at(x, y) - 0.5) * 40 - std::max(0.0, u) * 10;
        c[0] = s - 4;
        c[1] = s - 1;
        c[2] = s + 6;
      }
    }
    detail::put(photo, x, y, c[0], c[1], c[2]);
    mask.set(x, y, true);
  };

  // Mount pole.
  const double pw = R * 0.12, top = cy + R * squash * 0.5, bottom = std::min<double>(h - 1, cy + R * 1.65);
  for (int y = static_cast<int>(top); y <= static_cast<int>(bottom); ++y)
    for (int x = static_cast<int>(cx - pw / 2); x <= static_cast<int>(cx + pw / 2); ++x)
      if (x >= 0 && x < w && y >= 0 && y < h) shade_px(x, y, gray * 0.45 + (x - cx) / pw * 20, false, 0, 0);

  // Reflector.
  for (int y = static_cast<int>(cy - R - 2); y <= static_cast<int>(cy + R + 2); ++y) {
    for (int x = static_cast<int>(cx - R - 2); x <= static_cast<int>(cx + R + 2); ++x) {
      if (x < 0 || y < 0 || x >= w || y >= h) continue;
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      const double u = (dx * ct + dy * st) / R;
      const double v = (-dx * st + dy * ct) / (R * squash);
      const double r2 = u * u + v * v;
      if (r2 > 1.0) continue;
      double inten = gray * (0.78 + 0.22 * (1 - r2)) + 28 * (u * lx + v * ly);
      if (r2 > 0.9) inten *= 0.8;
      const double spec = std::exp(-((u + 0.35) * (u + 0.35) + (v + 0.35) * (v + 0.35)) / 0.04);
      inten += gloss * 120 * spec;
      shade_px(x, y, inten, true, u, v);
    }
  }

  // Wet streaks and droplets on the reflector.
  if (cond == DishCondition::Wet) {
    const int streaks = 6 + static_cast<int>(rng.below(8));
    for (int i = 0; i < streaks; ++i) {
      const double su = rng.uniform(-0.8, 0.8), sv = rng.uniform(-0.8, 0.2), len = rng.uniform(0.2, 0.7);
      for (double t = 0; t < len; t += 0.5 / R) {
        const double u = su, v = sv + t;
        if (u * u + v * v > 0.95) break;
        const int x = static_cast<int>(cx + u * R * ct - v * R * squash * st);
        const int y = static_cast<int>(cy + u * R * st + v * R * squash * ct);
        detail::blend(photo, x, y, 40, 50, 70, 0.5);
      }
    }
    const int drops = 25 + static_cast<int>(rng.below(30));
    for (int i = 0; i < drops; ++i) {
      const double ang = rng.uniform(0, 2 * std::numbers::pi), rr = std::sqrt(rng.uniform()) * 0.9;
      const double u = rr * std::cos(ang), v = rr * std::sin(ang);
      const double x = cx + u * R * ct - v * R * squash * st, y = cy + u * R * st + v * R * squash * ct;
      const double dr = rng.uniform(1.0, 2.8);
      detail::disc(photo, x, y, dr, 60, 75, 100, 0.6);
      detail::disc(photo, x - dr * 0.3, y - dr * 0.3, dr * 0.4, 235, 240, 250, 0.9);
    }
  }

  // Feed arm and LNB head.
  const double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
  const double fx = cx + side * rng.uniform(0.25, 0.5) * R, fy = cy - rng.uniform(0.0, 0.3) * R;
  const double ax = cx - side * 0.1 * R, ay = cy + R * squash * 0.8;
  const double arm_w = std::max(2.0, R * 0.05);
  const int steps = static_cast<int>(std::hypot(fx - ax, fy - ay)) + 1;
  for (int i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    const double px = ax + (fx - ax) * t, py = ay + (fy - ay) * t;
    for (int y = static_cast<int>(py - arm_w); y <= static_cast<int>(py + arm_w); ++y)
      for (int x = static_cast<int>(px - arm_w); x <= static_cast<int>(px + arm_w); ++x)
        if (x >= 0 && y >= 0 && x < w && y < h && std::hypot(x - px, y - py) <= arm_w)
          shade_px(x, y, gray * 0.55, false, 0, 0);
  }
  const double lnb = R * 0.14;
  for (int y = static_cast<int>(fy - lnb); y <= static_cast<int>(fy + lnb); ++y)
    for (int x = static_cast<int>(fx - lnb * 0.8); x <= static_cast<int>(fx + lnb * 0.8); ++x)
      if (x >= 0 && y >= 0 && x < w && y < h) shade_px(x, y, gray * 0.7, false, 0, 0);
  return mask;
}

inline DishScene render_dish_scene(DishCondition cond, BackgroundCondition bg, std::uint64_t seed,
                                   int w = kPhotoWidth, int h = kPhotoHeight) {
  DishScene s{render_background(bg, derive_stream(seed, {0x5CE}), w, h), BinaryMask(w, h)};
  Rng rng(derive_stream(seed, {0xD15, static_cast<std::uint64_t>(cond)}));
  s.mask = draw_dish(s.photo, cond, rng);
  return s;
}

struct CorpusSpec {
  std::vector<DishCondition> conditions{DishCondition::Snow, DishCondition::Wet, DishCondition::Normal};
  int photos_per_condition = 12;
  int backgrounds_per_condition = 6;
  std::uint64_t seed = 0;
};

/// Writes
///   <root>/photos/<condition>/<condition>_<ii>.png   dish photo
///   <root>/photos/<condition>/<condition>_<ii>.json  annotation (mask object)
///   <root>/photos/<condition>/<condition>_<ii>_mask0.png
///   <root>/backgrounds/<weather>/<weather>_<ii>.png
inline void write_corpus(const CorpusSpec& spec, const std::string& root) {
  namespace fs = std::filesystem;
  char name[64];
  for (const auto cond : spec.conditions) {
    const std::string c(to_string(cond));
    const fs::path dir = fs::path(root) / "photos" / c;
    fs::create_directories(dir);
    for (int i = 0; i < spec.photos_per_condition; ++i) {
      const auto seed = derive_stream(spec.seed, {0xC0, static_cast<std::uint64_t>(cond), static_cast<std::uint64_t>(i)});
      const auto bg = kAllBackgrounds[static_cast<std::size_t>(i) % kAllBackgrounds.size()];
      const auto scene = render_dish_scene(cond, bg, seed);
      std::snprintf(name, sizeof name, "%s_%02d", c.c_str(), i);
      const std::string stem(name);
      save_png(scene.photo, (dir / (stem + ".png")).string());
      save_mask(scene.mask, (dir / (stem + "_mask0.png")).string());
      seg::Annotation a;
      a.image_path = stem + ".png";
      a.width = scene.photo.width();
      a.height = scene.photo.height();
      seg::AnnotatedObject obj;
      obj.mask_path = stem + "_mask0.png";
      a.objects.push_back(obj);
      seg::write_annotation(a, (dir / (stem + ".json")).string());
    }
  }
  for (const auto bg : kAllBackgrounds) {
    const std::string b(to_string(bg));
    const fs::path dir = fs::path(root) / "backgrounds" / b;
    fs::create_directories(dir);
    for (int i = 0; i < spec.backgrounds_per_condition; ++i) {
      std::snprintf(name, sizeof name, "%s_%02d.png", b.c_str(), i);
      save_png(render_background(bg, derive_stream(spec.seed, {0xBA, static_cast<std::uint64_t>(i)})),
               (dir / name).string());
    }
  }
}

}  // namespace dishwx::synth
