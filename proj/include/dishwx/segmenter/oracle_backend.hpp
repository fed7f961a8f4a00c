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

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dishwx/hash.hpp"
#include "dishwx/image_io.hpp"
#include "dishwx/segmenter/annotation.hpp"
#include "dishwx/segmenter/segmentation.hpp"
#include "dishwx/transform.hpp"

namespace dishwx::seg {

/// Returns ground-truth masks from annotation files. Images are matched by
/// pixel content, so any decoded copy of an annotated image resolves.
/// Fine-tuning is a no-op that writes an identity checkpoint pointing at the
/// annotation root.
class OracleBackend final : public SegmentationBackend {
 public:
  explicit OracleBackend(double confidence_threshold = 0.5) : threshold_(confidence_threshold) {}

  std::string name() const override { return "oracle"; }
  bool trainable() const override { return true; }

  Checkpoint finetune(const std::vector<AnnotatedImage>& dataset, const SegmenterConfig& config,
                      const std::string& out_dir, const TraceSink& trace) override {
    if (dataset.empty()) throw Error(ErrorCode::EmptyDataset, "no annotated images to fine-tune on");
    config.validate();
    nlohmann::json j;
    j["backend"] = name();
    j["annotations"] = nlohmann::json::array();
    for (const auto& a : dataset) {
      if (!std::filesystem::exists(a.annotation_path))
        throw Error(ErrorCode::AnnotationMissing, "missing annotation " + a.annotation_path);
      j["annotations"].push_back(std::filesystem::absolute(a.annotation_path).string());
    }
    if (trace) trace(TrainingTrace{0, {}, 0.0}, config.weights);
    std::filesystem::create_directories(out_dir);
    const std::string path = (std::filesystem::path(out_dir) / "oracle_checkpoint.json").string();
    std::ofstream(path) << j.dump(1) << '\n';
    threshold_ = config.confidence_threshold;
    return Checkpoint{name(), path, file_hash(path)};
  }

  /// Loads from an identity checkpoint, or directly from an annotation root
  /// directory (every *.json below it).
  void load(const Checkpoint& checkpoint) override {
    if (checkpoint.path.empty() || !std::filesystem::exists(checkpoint.path))
      throw Error(ErrorCode::CheckpointMissing, "oracle checkpoint not found: " + checkpoint.path);
    std::vector<std::string> files;
    if (std::filesystem::is_directory(checkpoint.path)) {
      for (const auto& e : std::filesystem::recursive_directory_iterator(checkpoint.path))
        if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path().string());
      std::sort(files.begin(), files.end());
    } else {
      std::ifstream in(checkpoint.path);
      const auto j = nlohmann::json::parse(in, nullptr, false);
      if (j.is_discarded() || !j.contains("annotations"))
        throw Error(ErrorCode::CheckpointMissing, "not an oracle checkpoint: " + checkpoint.path);
      for (const auto& f : j["annotations"]) files.push_back(f.get<std::string>());
    }
    index_.clear();
    for (const auto& f : files) add_annotation(f);
    loaded_ = true;
  }

  void add_annotation(const std::string& annotation_path) {
    const Annotation a = read_annotation(annotation_path);
    const Image img = to_rgb(load_image(annotation_image_path(a, annotation_path)));
    index_[img.content_hash()] = annotation_path;
  }

  bool loaded() const override { return loaded_; }

  SegmentationResult segment(const Image& img) const override {
    if (!loaded_) throw Error(ErrorCode::CheckpointMissing, "oracle backend has no annotations loaded");
    const auto it = index_.find(to_rgb(img).content_hash());
    if (it == index_.end()) throw Error(ErrorCode::AnnotationMissing, "no annotation matches this image");
    const Annotation a = read_annotation(it->second);
    auto masks = annotation_masks(a, it->second);
    SegmentationResult r;
    for (std::size_t i = 0; i < masks.size(); ++i) {
      if (a.objects[i].score < threshold_) continue;
      if (!masks[i].matches(img)) throw Error(ErrorCode::DimensionMismatch, "annotation size differs from image");
      r.detections.push_back({std::move(masks[i]), a.objects[i].score, a.objects[i].label});
    }
    sort_by_confidence(r.detections);
    return r;
  }

 private:
  double threshold_;
  bool loaded_ = false;
  std::map<std::string, std::string> index_;  // pixel hash -> annotation file
};

}  // namespace dishwx::seg
