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

// Synthetic dataset forging: augmented dish cutouts composited onto weather
// backgrounds with balanced (dish condition x background condition)
// combinations and disjoint train/validation cutout pools.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numbers>
#include <string>
#include <thread>
#include <vector>

#include "dishwx/error.hpp"
#include "dishwx/forge/manifest.hpp"
#include "dishwx/image.hpp"
#include "dishwx/image_io.hpp"
#include "dishwx/rng.hpp"
#include "dishwx/segmenter/annotation.hpp"
#include "dishwx/transform.hpp"

namespace dishwx::forge {

inline constexpr int kForgedSize = 300;

struct ScenarioSpec {
  Scenario scenario = Scenario::Initial;
  int per_combination = 10;
  std::uint64_t seed = 0;

  std::vector<DishCondition> dishes() const { return dish_conditions(scenario); }
  std::vector<BackgroundCondition> backgrounds() const { return {kAllBackgrounds.begin(), kAllBackgrounds.end()}; }
  int combinations() const { return static_cast<int>(dishes().size() * backgrounds().size()); }
  int dataset_size() const { return combinations() * per_combination; }
};

struct CompositionParams {
  /// Longest cutout side as a fraction of the background width.
  double scale_min = 0.4;
  double scale_max = 0.8;
  double rotation_min_deg = -30.0;
  double rotation_max_deg = 30.0;

  void validate() const {
    if (!(scale_min > 0.0) || scale_min > scale_max)
      throw Error(ErrorCode::InvalidConfig, "composition scale range must satisfy 0 < min <= max");
    if (rotation_min_deg > rotation_max_deg) throw Error(ErrorCode::InvalidConfig, "rotation range is inverted");
  }
};

struct Cutout {
  std::string id;
  DishCondition condition = DishCondition::Normal;
  Image rgba;
};

struct Background {
  std::string id;
  BackgroundCondition condition = BackgroundCondition::Sunny;
  Image image;
};

using CutoutPool = std::vector<Cutout>;
using BackgroundPool = std::vector<Background>;

struct Composite {
  Image image;       // RGB, kForgedSize square
  BinaryMask mask;   // alpha >= 128 of the placed cutout
};

// ---------------------------------------------------------------------------

/// Splits cutouts per dish condition into disjoint train/validation pools.
/// Each condition keeps at least one cutout on each side.
inline std::pair<CutoutPool, CutoutPool> split_cutout_pool(const CutoutPool& cutouts, double fraction,
                                                           std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw Error(ErrorCode::InvalidConfig, "split fraction must lie in (0,1)");
  std::map<DishCondition, std::vector<const Cutout*>> by_condition;
  for (const auto& c : cutouts) by_condition[c.condition].push_back(&c);
  CutoutPool train, val;
  for (auto& [cond, items] : by_condition) {
    if (items.size() < 2)
      throw Error(ErrorCode::InsufficientCutouts,
                  "need >= 2 cutouts for condition " + std::string(to_string(cond)));
    std::sort(items.begin(), items.end(), [](const Cutout* a, const Cutout* b) { return a->id < b->id; });
    Rng rng(derive_stream(seed, {0x5B117, static_cast<std::uint64_t>(cond)}));
    rng.shuffle(items.begin(), items.end());
    const auto n = static_cast<long>(items.size());
    const long n_train = std::clamp(std::lround(fraction * static_cast<double>(n)), 1L, n - 1);
    for (long i = 0; i < n; ++i) (i < n_train ? train : val).push_back(*items[static_cast<std::size_t>(i)]);
  }
  return {std::move(train), std::move(val)};
}

/// Center-crops to square and resizes to the forged resolution (RGB).
inline Image prepare_background(const Image& bg) { return crop_and_resize(to_rgb(bg), kForgedSize, kForgedSize); }

/// Alpha-blends an already transformed RGBA cutout onto an RGB background
/// with its top-left corner at (x, y). The cutout must lie fully inside.
inline Composite blend_at(const Image& cutout, const Image& background, int x, int y) {
  if (!cutout.has_alpha()) throw Error(ErrorCode::InvalidImage, "cutout must be RGBA");
  if (x < 0 || y < 0 || x + cutout.width() > background.width() || y + cutout.height() > background.height())
    throw Error(ErrorCode::CutoutTooLarge, "cutout does not fit inside the background at the given position");
  Composite out{to_rgb(background), BinaryMask(background.width(), background.height())};
  for (int v = 0; v < cutout.height(); ++v) {
    for (int u = 0; u < cutout.width(); ++u) {
      const std::uint8_t* f = cutout.pixel(u, v);
      const int a = f[3];
      if (a == 0) continue;
      std::uint8_t* b = out.image.pixel(x + u, y + v);
      for (int k = 0; k < 3; ++k) b[k] = static_cast<std::uint8_t>((a * f[k] + (255 - a) * b[k] + 127) / 255);
      if (a >= 128) out.mask.set(x + u, y + v, true);
    }
  }
  return out;
}

struct Placement {
  double angle_deg = 0.0;
  double scale = 1.0;  // applied to the cutout's pixel size
  int x = 0;
  int y = 0;
};

inline Composite compose_at(const Image& cutout, const Image& background, const Placement& p) {
  const Image t = (p.angle_deg == 0.0 && p.scale == 1.0) ? cutout : rotate_and_scale(cutout, p.angle_deg, p.scale);
  return blend_at(t, prepare_background(background), p.x, p.y);
}

/// Samples scale, rotation and a position keeping the cutout fully in frame,
/// then blends. Deterministic in the generator state.
inline Composite compose(const Image& cutout, const Image& background, const CompositionParams& params, Rng& rng) {
  params.validate();
  if (!cutout.has_alpha()) throw Error(ErrorCode::InvalidImage, "cutout must be RGBA");
  const Image bg = prepare_background(background);
  const double rel = rng.uniform(params.scale_min, params.scale_max);
  const double angle = rng.uniform(params.rotation_min_deg, params.rotation_max_deg);
  // The sampled ratio applies to the rotated extent, so any ratio <= 1 fits.
  const double rad = angle * std::numbers::pi / 180.0;
  const double c = std::abs(std::cos(rad)), s = std::abs(std::sin(rad));
  const double ext = std::max(cutout.width() * c + cutout.height() * s, cutout.width() * s + cutout.height() * c);
  const double scale = rel * kForgedSize / ext;
  const Image t = rotate_and_scale(cutout, angle, scale);
  if (t.width() > bg.width() || t.height() > bg.height())
    throw Error(ErrorCode::CutoutTooLarge, "transformed cutout " + std::to_string(t.width()) + "x" +
                                               std::to_string(t.height()) + " exceeds the background");
  const int x = static_cast<int>(rng.below(static_cast<std::uint64_t>(bg.width() - t.width() + 1)));
  const int y = static_cast<int>(rng.below(static_cast<std::uint64_t>(bg.height() - t.height() + 1)));
  return blend_at(t, bg, x, y);
}

// ---------------------------------------------------------------------------

struct GenerateOptions {
  CompositionParams params;
  Split split = Split::Train;
  int jobs = 1;
  /// Write a {0,255} mask PNG and an annotation file next to every image.
  bool write_annotations = true;
};

namespace detail {

inline std::vector<const Cutout*> pool_for(const CutoutPool& pool, DishCondition c) {
  std::vector<const Cutout*> out;
  for (const auto& x : pool)
    if (x.condition == c) out.push_back(&x);
  std::sort(out.begin(), out.end(), [](const Cutout* a, const Cutout* b) { return a->id < b->id; });
  return out;
}
inline std::vector<const Background*> pool_for(const BackgroundPool& pool, BackgroundCondition c) {
  std::vector<const Background*> out;
  for (const auto& x : pool)
    if (x.condition == c) out.push_back(&x);
  std::sort(out.begin(), out.end(), [](const Background* a, const Background* b) { return a->id < b->id; });
  return out;
}

inline std::uint64_t split_tag(Split s) { return 0xF0 + static_cast<std::uint64_t>(s); }

}  // namespace detail

/// Forges |dish| x |background| x per_combination images under
/// `<out_root>/<scenario>/<split>/` and writes `<out_root>/<scenario>/<split>.jsonl`.
/// Every image uses its own stream derive_stream(seed, {split, combination,
/// index}), so results do not depend on `jobs`.
inline DatasetManifest generate_dataset(const ScenarioSpec& spec, const CutoutPool& cutouts,
                                        const BackgroundPool& backgrounds, const std::string& out_root,
                                        const GenerateOptions& opt = {}) {
  opt.params.validate();
  if (spec.per_combination < 1) throw Error(ErrorCode::InvalidConfig, "per_combination must be >= 1");
  const auto dishes = spec.dishes();
  const auto bgs = spec.backgrounds();
  std::vector<std::vector<const Cutout*>> cpools;
  std::vector<std::vector<const Background*>> bpools;
  for (auto d : dishes) {
    cpools.push_back(detail::pool_for(cutouts, d));
    if (cpools.back().empty())
      throw Error(ErrorCode::MissingConditionPool, "no cutouts for dish condition " + std::string(to_string(d)));
  }
  for (auto b : bgs) {
    bpools.push_back(detail::pool_for(backgrounds, b));
    if (bpools.back().empty())
      throw Error(ErrorCode::MissingConditionPool, "no backgrounds for condition " + std::string(to_string(b)));
  }

  const std::string split_name(to_string(opt.split));
  const auto scenario_dir = std::filesystem::path(out_root) / std::string(to_string(spec.scenario));
  const auto image_dir = scenario_dir / split_name;
  std::filesystem::create_directories(image_dir);

  const int total = spec.dataset_size();
  std::vector<LabeledSample> samples(static_cast<std::size_t>(total));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(total));

  auto work = [&](int idx) {
    try {
      const int comb = idx / spec.per_combination;
      const int i = idx % spec.per_combination;
      const std::size_t di = static_cast<std::size_t>(comb) / bgs.size();
      const std::size_t bi = static_cast<std::size_t>(comb) % bgs.size();
      const std::uint64_t stream = derive_stream(
          spec.seed, {detail::split_tag(opt.split), static_cast<std::uint64_t>(comb), static_cast<std::uint64_t>(i)});
      Rng rng(stream);
      const Cutout& c = *cpools[di][rng.below(cpools[di].size())];
      const Background& b = *bpools[bi][rng.below(bpools[bi].size())];
      const Composite comp = compose(c.rgba, b.image, opt.params, rng);

      char stem[96];
      std::snprintf(stem, sizeof(stem), "%s_%s_%03d", std::string(to_string(dishes[di])).c_str(),
                    std::string(to_string(bgs[bi])).c_str(), i);
      const std::string image_name = std::string(stem) + ".png";
      save_png(comp.image, (image_dir / image_name).string());

      LabeledSample s;
      s.image_path = split_name + "/" + image_name;
      s.dish_condition = dishes[di];
      s.background_condition = bgs[bi];
      s.split = opt.split;
      s.source_cutout_id = c.id;
      s.combination_index = comb;
      s.rng_stream_id = stream;
      if (opt.write_annotations) {
        const std::string mask_name = std::string(stem) + "_mask.png";
        const std::string ann_name = std::string(stem) + ".json";
        save_mask(comp.mask, (image_dir / mask_name).string());
        seg::Annotation ann;
        ann.image_path = image_name;
        ann.width = comp.image.width();
        ann.height = comp.image.height();
        seg::AnnotatedObject obj;
        obj.mask_path = mask_name;
        ann.objects.push_back(obj);
        seg::write_annotation(ann, (image_dir / ann_name).string());
        s.annotation_path = split_name + "/" + ann_name;
      }
      samples[static_cast<std::size_t>(idx)] = std::move(s);
    } catch (...) {
      errors[static_cast<std::size_t>(idx)] = std::current_exception();
    }
  };

  const int jobs = std::max(1, std::min(opt.jobs, total));
  if (jobs == 1) {
    for (int idx = 0; idx < total; ++idx) work(idx);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t)
      pool.emplace_back([&, t] {
        for (int idx = t; idx < total; idx += jobs) work(idx);
      });
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  DatasetManifest m;
  m.scenario = spec.scenario;
  m.seed = spec.seed;
  m.per_combination = spec.per_combination;
  m.samples = std::move(samples);
  m.root = scenario_dir.string();
  write_manifest(m, (scenario_dir / (split_name + ".jsonl")).string());
  return m;
}

/// Balanced test set of `size` images drawn only from validation-pool cutouts.
inline DatasetManifest build_test_set(const ScenarioSpec& spec, const CutoutPool& val_pool,
                                      const BackgroundPool& backgrounds, int size, const std::string& out_root,
                                      GenerateOptions opt = {}) {
  if (size < 1 || size % spec.combinations() != 0)
    throw Error(ErrorCode::IndivisibleSize, std::to_string(size) + " is not divisible by " +
                                                std::to_string(spec.combinations()) + " combinations");
  ScenarioSpec s = spec;
  s.per_combination = size / spec.combinations();
  opt.split = Split::Test;
  return generate_dataset(s, val_pool, backgrounds, out_root, opt);
}

// ---------------------------------------------------------------------------
// Pool loading: <dir>/<condition>/<name>.{png,jpg,jpeg}

inline std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  if (!std::filesystem::is_directory(dir)) return out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const auto ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".png" || ext == ".jpg" || ext == ".jpeg")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline CutoutPool load_cutout_pool(const std::string& dir) {
  CutoutPool pool;
  for (auto cond : {DishCondition::Snow, DishCondition::Wet, DishCondition::Normal}) {
    const std::string name(to_string(cond));
    for (const auto& p : list_images(std::filesystem::path(dir) / name)) {
      Image img = load_image(p.string());
      pool.push_back({name + "/" + p.stem().string(), cond, to_rgba(img)});
    }
  }
  return pool;
}

inline BackgroundPool load_background_pool(const std::string& dir) {
  BackgroundPool pool;
  for (auto cond : kAllBackgrounds) {
    const std::string name(to_string(cond));
    for (const auto& p : list_images(std::filesystem::path(dir) / name))
      pool.push_back({name + "/" + p.stem().string(), cond, load_image(p.string())});
  }
  return pool;
}

}  // namespace dishwx::forge
