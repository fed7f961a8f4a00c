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

// Batch stages built on a segmentation backend: background removal over a
// dataset manifest, and cutout extraction from annotated photos.

#include <algorithm>
#include <filesystem>
#include <optional>
#include <functional>
#include <string>
#include <vector>

#include "dishwx/error.hpp"
#include "dishwx/forge/manifest.hpp"
#include "dishwx/image.hpp"
#include "dishwx/image_io.hpp"
#include "dishwx/segmenter/segmentation.hpp"

namespace dishwx::seg {

/// Provenance tag stored in manifests, "<backend>:<checkpoint hash>".
inline std::string provenance(const SegmentationBackend& backend, const Checkpoint& ck) {
  return backend.name() + ":" + (ck.hash.empty() ? std::string("unhashed") : ck.hash);
}

struct Skipped {
  std::string path;
  std::string reason;
};

/// Hook for skipped inputs (images without any detection).
using SkipSink = std::function<void(const Skipped&)>;

/// Segment, select the object of interest and remove the background of every
/// sample. Output images mirror the manifest's relative paths under
/// `out_root`; the returned manifest (root = out_root) carries
/// preprocessed_by = `tag`. Images with no detection are skipped and reported.
inline forge::DatasetManifest remove_backgrounds(const SegmentationBackend& backend,
                                                 const forge::DatasetManifest& in, const std::string& out_root,
                                                 const std::string& tag, const SkipSink& on_skip = {},
                                                 const std::optional<FillPolicy>& fill = std::nullopt) {
  if (in.samples.empty()) throw Error(ErrorCode::EmptyManifest, "manifest has no samples");
  if (!backend.loaded()) throw Error(ErrorCode::CheckpointMissing, "segmentation backend has no checkpoint loaded");
  namespace fs = std::filesystem;
  forge::DatasetManifest out = in;
  out.root = out_root;
  out.samples.clear();
  for (const auto& s : in.samples) {
    const Image img = load_image(in.resolve(s.image_path));
    const auto result = backend.segment(img);
    if (result.detections.empty()) {
      if (on_skip) on_skip({s.image_path, "NoDetection"});
      continue;
    }
    const BinaryMask mask = select_object_of_interest(result);
    const fs::path dst = fs::path(out_root) / s.image_path;
    fs::create_directories(dst.parent_path());
    save_png(remove_background(img, mask, fill), dst.string());
    auto t = s;
    t.preprocessed_by = tag;
    t.annotation_path.clear();
    out.samples.push_back(std::move(t));
  }
  return out;
}

/// For every photo under <photos>/<condition>/ (files ending in _mask*.png
/// are ignored), writes the selected object's RGBA cutout to
/// <out>/<condition>/<stem>.png. Returns the number written.
inline int extract_cutouts(const SegmentationBackend& backend, const std::string& photos, const std::string& out,
                           const SkipSink& on_skip = {}) {
  if (!backend.loaded()) throw Error(ErrorCode::CheckpointMissing, "segmentation backend has no checkpoint loaded");
  namespace fs = std::filesystem;
  int written = 0;
  for (const auto cond : {DishCondition::Snow, DishCondition::Wet, DishCondition::Normal}) {
    const std::string c(to_string(cond));
    const fs::path dir = fs::path(photos) / c;
    if (!fs::is_directory(dir)) continue;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      const auto ext = e.path().extension().string();
      const auto stem = e.path().stem().string();
      if (!e.is_regular_file() || (ext != ".png" && ext != ".jpg" && ext != ".jpeg")) continue;
      if (stem.find("_mask") != std::string::npos) continue;
      files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& p : files) {
      const Image img = load_image(p.string());
      const auto result = backend.segment(img);
      if (result.detections.empty()) {
        if (on_skip) on_skip({p.string(), "NoDetection"});
        continue;
      }
      const auto dst = fs::path(out) / c / (p.stem().string() + ".png");
      fs::create_directories(dst.parent_path());
      save_png(extract_cutout(img, select_object_of_interest(result)), dst.string());
      ++written;
    }
  }
  return written;
}

}  // namespace dishwx::seg
