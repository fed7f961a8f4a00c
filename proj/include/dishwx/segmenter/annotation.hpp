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

// Per-image annotation files.
//
//   {
//     "image": "photo_0001.png",          // relative to the annotation file
//     "width": 300, "height": 300,
//     "objects": [
//       {"label": "dish", "polygon": [[x, y], [x, y], ...]},
//       {"label": "dish", "mask": "photo_0001_mask0.png", "score": 0.9}
//     ]
//   }
//
// Each object carries either a polygon (pixel coordinates, even-odd fill
// sampled at pixel centres) or a reference to a {0,255} mask PNG. "score" is
// optional and defaults to 1.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dishwx/error.hpp"
#include "dishwx/image.hpp"
#include "dishwx/image_io.hpp"

namespace dishwx::seg {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

struct AnnotatedObject {
  std::string label = "dish";
  std::vector<Point> polygon;  // empty when mask_path is used
  std::string mask_path;       // relative to the annotation file
  double score = 1.0;
};

struct Annotation {
  std::string image_path;  // relative to the annotation file
  int width = 0;
  int height = 0;
  std::vector<AnnotatedObject> objects;
};

/// Even-odd polygon fill sampled at pixel centres.
inline BinaryMask rasterize_polygon(const std::vector<Point>& poly, int width, int height) {
  BinaryMask m(width, height);
  if (poly.size() < 3) return m;
  std::vector<double> xs;
  for (int y = 0; y < height; ++y) {
    const double cy = y + 0.5;
    xs.clear();
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
      const Point& a = poly[i];
      const Point& b = poly[j];
      if ((a.y > cy) != (b.y > cy)) xs.push_back(a.x + (cy - a.y) * (b.x - a.x) / (b.y - a.y));
    }
    std::sort(xs.begin(), xs.end());
    for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
      const int x0 = std::max(0, static_cast<int>(std::ceil(xs[k] - 0.5)));
      const int x1 = std::min(width - 1, static_cast<int>(std::ceil(xs[k + 1] - 0.5)) - 1);
      for (int x = x0; x <= x1; ++x) m.set(x, y, true);
    }
  }
  return m;
}

inline Annotation read_annotation(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::AnnotationMissing, "cannot open annotation " + path);
  Annotation a;
  try {
    const auto j = nlohmann::json::parse(in);
    a.image_path = j.at("image").get<std::string>();
    a.width = j.at("width").get<int>();
    a.height = j.at("height").get<int>();
    for (const auto& o : j.at("objects")) {
      AnnotatedObject obj;
      obj.label = o.value("label", std::string("dish"));
      obj.score = o.value("score", 1.0);
      if (o.contains("polygon")) {
        for (const auto& p : o.at("polygon")) obj.polygon.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
      } else if (o.contains("mask")) {
        obj.mask_path = o.at("mask").get<std::string>();
      } else {
        throw Error(ErrorCode::MalformedAnnotation, path + ": object needs 'polygon' or 'mask'");
      }
      a.objects.push_back(std::move(obj));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedAnnotation, path + ": " + e.what());
  }
  if (a.width < 1 || a.height < 1) throw Error(ErrorCode::MalformedAnnotation, path + ": bad dimensions");
  return a;
}

inline void write_annotation(const Annotation& a, const std::string& path) {
  nlohmann::json j;
  j["image"] = a.image_path;
  j["width"] = a.width;
  j["height"] = a.height;
  j["objects"] = nlohmann::json::array();
  for (const auto& o : a.objects) {
    nlohmann::json jo;
    jo["label"] = o.label;
    if (!o.mask_path.empty()) {
      jo["mask"] = o.mask_path;
    } else {
      auto poly = nlohmann::json::array();
      for (const auto& p : o.polygon) poly.push_back({p.x, p.y});
      jo["polygon"] = poly;
    }
    if (o.score != 1.0) jo["score"] = o.score;
    j["objects"].push_back(jo);
  }
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream(path) << j.dump(1) << '\n';
}

/// Ground-truth masks of one annotation, resolved relative to its file.
inline std::vector<BinaryMask> annotation_masks(const Annotation& a, const std::string& annotation_path) {
  const auto base = std::filesystem::path(annotation_path).parent_path();
  std::vector<BinaryMask> masks;
  for (const auto& o : a.objects) {
    if (!o.mask_path.empty()) {
      BinaryMask m = load_mask((base / o.mask_path).string());
      if (m.width() != a.width || m.height() != a.height)
        throw Error(ErrorCode::MalformedAnnotation, annotation_path + ": mask size differs from image");
      masks.push_back(std::move(m));
    } else {
      masks.push_back(rasterize_polygon(o.polygon, a.width, a.height));
    }
  }
  return masks;
}

inline std::string annotation_image_path(const Annotation& a, const std::string& annotation_path) {
  return (std::filesystem::path(annotation_path).parent_path() / a.image_path).string();
}

}  // namespace dishwx::seg
