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

// Adapter for an out-of-process instance segmenter (e.g. a YOLACT install).
// Data crosses the boundary as files:
//
//   finetune   writes <out_dir>/dataset.jsonl ({"image":..,"annotation":..}
//              per line) and runs `train_command`. The command must leave
//              <out_dir>/checkpoint.bin and <out_dir>/losses.jsonl, one
//              {"iteration":i,"cls":..,"box":..,"mask":..} object per line.
//              Totals are recomposed here with the configured weights.
//   segment    writes the image to <work>/input.png and runs `infer_command`.
//              The command must leave <work>/detections.json:
//              [{"mask":"m0.png","score":0.93,"label":"dish"}, ...] with mask
//              paths relative to <work>.
//
// Command templates may reference {dataset} {out_dir} {checkpoint} {image}
// {work} {lr} {iterations} {w_cls} {w_box} {w_mask}; values are shell-quoted.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "dishwx/hash.hpp"
#include "dishwx/image_io.hpp"
#include "dishwx/segmenter/segmentation.hpp"

namespace dishwx::seg {

namespace detail {

inline std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'')
      out += "'\\''";
    else
      out += c;
  }
  return out + "'";
}

inline std::string expand_template(std::string tmpl, const std::map<std::string, std::string>& vars) {
  for (const auto& [key, value] : vars) {
    const std::string needle = "{" + key + "}";
    for (std::size_t pos = tmpl.find(needle); pos != std::string::npos; pos = tmpl.find(needle, pos)) {
      const std::string q = shell_quote(value);
      tmpl.replace(pos, needle.size(), q);
      pos += q.size();
    }
  }
  return tmpl;
}

inline void run_command(const std::string& cmd) {
  const int rc = std::system(cmd.c_str());
  if (rc != 0) throw Error(ErrorCode::BackendFailure, "external command failed (" + std::to_string(rc) + "): " + cmd);
}

}  // namespace detail

class ExternalProcessBackend final : public SegmentationBackend {
 public:
  ExternalProcessBackend(std::string infer_command, std::string train_command, std::string work_dir,
                         double confidence_threshold = 0.5)
      : infer_command_(std::move(infer_command)),
        train_command_(std::move(train_command)),
        work_dir_(std::move(work_dir)),
        threshold_(confidence_threshold) {}

  std::string name() const override { return "external"; }
  bool trainable() const override { return !train_command_.empty(); }

  Checkpoint finetune(const std::vector<AnnotatedImage>& dataset, const SegmenterConfig& config,
                      const std::string& out_dir, const TraceSink& trace) override {
    if (!trainable()) throw Error(ErrorCode::BackendNotTrainable, "external backend has no train command");
    if (dataset.empty()) throw Error(ErrorCode::EmptyDataset, "no annotated images to fine-tune on");
    config.validate();
    std::filesystem::create_directories(out_dir);
    const auto dir = std::filesystem::absolute(out_dir);
    const std::string list = (dir / "dataset.jsonl").string();
    {
      std::ofstream out(list);
      for (const auto& a : dataset)
        out << nlohmann::json{{"image", std::filesystem::absolute(a.image_path).string()},
                              {"annotation", std::filesystem::absolute(a.annotation_path).string()}}
                   .dump()
            << '\n';
    }
    std::ostringstream lr, wc, wb, wm;
    lr << config.learning_rate;
    wc << config.weights.cls;
    wb << config.weights.box;
    wm << config.weights.mask;
    detail::run_command(detail::expand_template(train_command_, {{"dataset", list},
                                                                 {"out_dir", dir.string()},
                                                                 {"lr", lr.str()},
                                                                 {"iterations", std::to_string(config.iterations)},
                                                                 {"w_cls", wc.str()},
                                                                 {"w_box", wb.str()},
                                                                 {"w_mask", wm.str()}}));
    const std::string ckpt = (dir / "checkpoint.bin").string();
    if (!std::filesystem::exists(ckpt)) throw Error(ErrorCode::BackendFailure, "train command left no checkpoint.bin");
    std::ifstream losses(dir / "losses.jsonl");
    std::string line;
    while (std::getline(losses, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded()) throw Error(ErrorCode::BackendFailure, "unparseable loss line: " + line);
      TrainingTrace t;
      t.iteration = j.value("iteration", 0);
      t.components = {j.value("cls", 0.0), j.value("box", 0.0), j.value("mask", 0.0)};
      t.total = composite_loss(t.components, config.weights);
      if (trace) trace(t, config.weights);
    }
    threshold_ = config.confidence_threshold;
    return Checkpoint{name(), ckpt, file_hash(ckpt)};
  }

  void load(const Checkpoint& checkpoint) override {
    if (!std::filesystem::exists(checkpoint.path))
      throw Error(ErrorCode::CheckpointMissing, "external checkpoint not found: " + checkpoint.path);
    checkpoint_ = std::filesystem::absolute(checkpoint.path).string();
  }

  bool loaded() const override { return !checkpoint_.empty(); }

  SegmentationResult segment(const Image& img) const override {
    if (!loaded()) throw Error(ErrorCode::CheckpointMissing, "external backend not loaded");
    std::lock_guard lock(mutex_);  // one shared work directory
    const auto work = std::filesystem::absolute(work_dir_);
    std::filesystem::remove_all(work);
    std::filesystem::create_directories(work);
    const std::string input = (work / "input.png").string();
    save_png(img, input);
    detail::run_command(detail::expand_template(
        infer_command_, {{"checkpoint", checkpoint_}, {"image", input}, {"work", work.string()}}));
    std::ifstream in(work / "detections.json");
    if (!in) throw Error(ErrorCode::BackendFailure, "infer command left no detections.json");
    const auto j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_array()) throw Error(ErrorCode::BackendFailure, "detections.json is not an array");
    SegmentationResult r;
    for (const auto& d : j) {
      const double score = d.value("score", 0.0);
      if (score < threshold_) continue;
      BinaryMask m = load_mask((work / d.at("mask").get<std::string>()).string());
      if (!m.matches(img)) throw Error(ErrorCode::DimensionMismatch, "external mask size differs from image");
      r.detections.push_back({std::move(m), score, d.value("label", std::string("dish"))});
    }
    sort_by_confidence(r.detections);
    return r;
  }

 private:
  std::string infer_command_;
  std::string train_command_;
  std::string work_dir_;
  double threshold_;
  std::string checkpoint_;
  mutable std::mutex mutex_;
};

}  // namespace dishwx::seg
