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
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dishwx/error.hpp"
#include "dishwx/image.hpp"

namespace dishwx::seg {

/// Relative weights of the three detector losses. The defaults are the
/// fine-tuning weights used for the dish segmenter: cls 1, box 1.5, mask 6.125.
struct LossWeights {
  double cls = 1.0;
  double box = 1.5;
  double mask = 6.125;
};

struct LossComponents {
  double cls = 0.0;
  double box = 0.0;
  double mask = 0.0;
};

inline double composite_loss(const LossComponents& l, const LossWeights& w = {}) {
  return w.cls * l.cls + w.box * l.box + w.mask * l.mask;
}

struct SegmenterConfig {
  LossWeights weights;
  double learning_rate = 2e-3;
  /// Training budget in optimizer iterations.
  int iterations = 30000;
  double confidence_threshold = 0.5;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate > 0.0)) throw Error(ErrorCode::InvalidConfig, "segmenter learning rate must be > 0");
    if (iterations < 0) throw Error(ErrorCode::InvalidConfig, "segmenter iterations must be >= 0");
    if (confidence_threshold < 0.0 || confidence_threshold > 1.0)
      throw Error(ErrorCode::InvalidConfig, "confidence threshold must lie in [0,1]");
  }
};

struct Detection {
  BinaryMask mask;
  double confidence = 0.0;
  std::string label = "dish";
};

/// Detections ordered by descending confidence.
struct SegmentationResult {
  std::vector<Detection> detections;
  bool empty() const { return detections.empty(); }
};

inline void sort_by_confidence(std::vector<Detection>& d) {
  std::stable_sort(d.begin(), d.end(),
                   [](const Detection& a, const Detection& b) { return a.confidence > b.confidence; });
}

/// Picks the object of interest: highest confidence, then larger mask area,
/// then the earliest-listed detection. Throws NoDetection on an empty result,
/// which callers treat as "skip and log this image".
inline const BinaryMask& select_object_of_interest(const SegmentationResult& result) {
  if (result.detections.empty()) throw Error(ErrorCode::NoDetection, "segmentation produced no detections");
  const Detection* best = &result.detections.front();
  std::size_t best_area = best->mask.popcount();
  for (const auto& d : result.detections) {
    const std::size_t area = d.mask.popcount();
    if (d.confidence > best->confidence || (d.confidence == best->confidence && area > best_area)) {
      best = &d;
      best_area = area;
    }
  }
  // Permutation invariance for exact ties: among equal (confidence, area),
  // prefer the lexicographically smallest mask so the choice does not depend
  // on list order. Equal masks are interchangeable.
  for (const auto& d : result.detections)
    if (d.confidence == best->confidence && d.mask.popcount() == best_area &&
        std::lexicographical_compare(d.mask.bits().begin(), d.mask.bits().end(), best->mask.bits().begin(),
                                     best->mask.bits().end()))
      best = &d;
  return best->mask;
}

/// Value written into removed (mask = 0) pixels.
struct FillPolicy {
  std::uint8_t r = 0, g = 0, b = 0, a = 0;
  static FillPolicy black() { return {0, 0, 0, 255}; }
  static FillPolicy transparent() { return {0, 0, 0, 0}; }
};

/// Keeps pixels under the mask byte-for-byte and replaces the rest with the
/// fill colour. RGB images ignore the fill alpha. Default fill: opaque black
/// for RGB, fully transparent for RGBA.
inline Image remove_background(const Image& img, const BinaryMask& mask, std::optional<FillPolicy> fill = std::nullopt) {
  if (!mask.matches(img)) throw Error(ErrorCode::DimensionMismatch, "mask and image dimensions differ");
  const FillPolicy f = fill.value_or(img.has_alpha() ? FillPolicy::transparent() : FillPolicy::black());
  const std::uint8_t value[4] = {f.r, f.g, f.b, f.a};
  Image out = img;
  const int c = img.channels();
  auto bits = mask.bits();
  auto px = out.bytes();
  for (std::size_t i = 0; i < bits.size(); ++i)
    if (!bits[i])
      for (int k = 0; k < c; ++k) px[i * c + k] = value[k];
  return out;
}

/// Crops to the mask's bounding box and emits RGBA with alpha = 255 * mask.
inline Image extract_cutout(const Image& img, const BinaryMask& mask) {
  if (!mask.matches(img)) throw Error(ErrorCode::DimensionMismatch, "mask and image dimensions differ");
  const auto box = bounding_box(mask);
  if (!box) throw Error(ErrorCode::EmptyMask, "cannot cut out an empty mask");
  Image out(box->width(), box->height(), 4, 0);
  for (int y = box->y0; y < box->y1; ++y) {
    for (int x = box->x0; x < box->x1; ++x) {
      std::uint8_t* o = out.pixel(x - box->x0, y - box->y0);
      const std::uint8_t* p = img.pixel(x, y);
      o[0] = p[0];
      o[1] = p[1];
      o[2] = p[2];
      o[3] = mask.get(x, y) ? 255 : 0;
    }
  }
  return out;
}

/// Opaque checkpoint reference: where the blob lives plus its content hash.
struct Checkpoint {
  std::string backend;
  std::string path;
  std::string hash;
  bool valid() const { return !backend.empty(); }
};

struct AnnotatedImage {
  std::string image_path;
  std::string annotation_path;
};

struct TrainingTrace {
  int iteration = 0;
  LossComponents components;
  double total = 0.0;
};

/// Observer for per-iteration loss traces while fine-tuning.
using TraceSink = std::function<void(const TrainingTrace&, const LossWeights&)>;

/// Pluggable instance-segmentation backend.
class SegmentationBackend {
 public:
  virtual ~SegmentationBackend() = default;

  virtual std::string name() const = 0;
  virtual bool trainable() const = 0;

  /// Fine-tunes on annotated images and persists a checkpoint under
  /// `out_dir`. The backend reports its loss as composite_loss(components,
  /// config.weights).
  virtual Checkpoint finetune(const std::vector<AnnotatedImage>& dataset, const SegmenterConfig& config,
                              const std::string& out_dir, const TraceSink& trace) = 0;

  virtual void load(const Checkpoint& checkpoint) = 0;
  virtual bool loaded() const = 0;

  /// Detections with masks of image size, sorted by descending confidence,
  /// each at or above the configured confidence threshold.
  virtual SegmentationResult segment(const Image& img) const = 0;
};

}  // namespace dishwx::seg
