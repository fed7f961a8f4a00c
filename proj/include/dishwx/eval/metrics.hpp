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

// Classification metrics over prediction records.
//
// Note: "average precision" here is per-class precision TP / (TP + FP) over
// argmax predictions. It is not the ranking/IoU-swept AP used for detectors.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dishwx/error.hpp"

namespace dishwx::eval {

struct PredictionRecord {
  std::string sample_id;
  std::string true_class;
  std::string predicted_class;
  std::vector<double> probabilities;  // optional; indexed by vocabulary order
  std::string model_id;
  int training_images = 0;  // optional; 0 = unknown
};

struct Counts {
  std::int64_t tp = 0, fp = 0, fn = 0;
  bool operator==(const Counts&) const = default;
};

struct ClassCounts {
  std::vector<std::string> classes;
  std::vector<Counts> counts;
  std::int64_t total = 0;

  const Counts& of(const std::string& c) const {
    for (std::size_t i = 0; i < classes.size(); ++i)
      if (classes[i] == c) return counts[i];
    throw Error(ErrorCode::UnknownClassLabel, "class '" + c + "' is not in the vocabulary");
  }
};

inline std::size_t class_position(const std::vector<std::string>& vocab, const std::string& c) {
  const auto it = std::find(vocab.begin(), vocab.end(), c);
  if (it == vocab.end()) throw Error(ErrorCode::UnknownClassLabel, "class '" + c + "' is not in the vocabulary");
  return static_cast<std::size_t>(it - vocab.begin());
}

/// Argmax of probabilities; first maximum wins.
inline std::size_t argmax(const std::vector<double>& p) {
  return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

/// Per-class TP/FP/FN. Throws EmptyInput on no records and UnknownClassLabel
/// on labels outside `vocab`.
inline ClassCounts confusion(const std::vector<PredictionRecord>& records, const std::vector<std::string>& vocab) {
  if (records.empty()) throw Error(ErrorCode::EmptyInput, "no prediction records");
  ClassCounts cc;
  cc.classes = vocab;
  cc.counts.assign(vocab.size(), {});
  for (const auto& r : records) {
    const auto t = class_position(vocab, r.true_class);
    const auto p = class_position(vocab, r.predicted_class);
    if (t == p) {
      ++cc.counts[t].tp;
    } else {
      ++cc.counts[p].fp;
      ++cc.counts[t].fn;
    }
    ++cc.total;
  }
  return cc;
}

/// Full C x C matrix, rows = true class, columns = predicted class.
inline std::vector<std::vector<std::int64_t>> confusion_matrix(const std::vector<PredictionRecord>& records,
                                                               const std::vector<std::string>& vocab) {
  if (records.empty()) throw Error(ErrorCode::EmptyInput, "no prediction records");
  std::vector<std::vector<std::int64_t>> m(vocab.size(), std::vector<std::int64_t>(vocab.size(), 0));
  for (const auto& r : records) ++m[class_position(vocab, r.true_class)][class_position(vocab, r.predicted_class)];
  return m;
}

/// TP / (TP + FP). Throws UndefinedAP when the class was never predicted.
inline double average_precision(const ClassCounts& counts, const std::string& c) {
  const auto& k = counts.of(c);
  if (k.tp + k.fp == 0) throw Error(ErrorCode::UndefinedAP, "class '" + c + "' was never predicted");
  return static_cast<double>(k.tp) / static_cast<double>(k.tp + k.fp);
}

/// Per-class AP in vocabulary order; nullopt where undefined.
inline std::vector<std::optional<double>> per_class_ap(const ClassCounts& counts) {
  std::vector<std::optional<double>> out;
  for (const auto& c : counts.classes) {
    const auto& k = counts.of(c);
    if (k.tp + k.fp == 0)
      out.emplace_back(std::nullopt);
    else
      out.emplace_back(static_cast<double>(k.tp) / static_cast<double>(k.tp + k.fp));
  }
  return out;
}

/// Mean AP over classes with defined AP. `excluded`, if given, receives the
/// skipped class names so callers can warn.
inline double mean_ap(const ClassCounts& counts, std::vector<std::string>* excluded = nullptr) {
  const auto aps = per_class_ap(counts);
  double sum = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < aps.size(); ++i) {
    if (aps[i]) {
      sum += *aps[i];
      ++n;
    } else if (excluded) {
      excluded->push_back(counts.classes[i]);
    }
  }
  if (n == 0) throw Error(ErrorCode::NoDefinedAP, "no class has a defined AP");
  return sum / n;
}

inline double accuracy(const std::vector<PredictionRecord>& records) {
  if (records.empty()) throw Error(ErrorCode::EmptyInput, "no prediction records");
  std::int64_t correct = 0;
  for (const auto& r : records) correct += r.true_class == r.predicted_class;
  return static_cast<double>(correct) / static_cast<double>(records.size());
}

/// Loss scale factor C/80 * 3/nl.
inline double loss_alpha(double classes, double layers) {
  if (!(classes >= 1.0) || !(layers >= 1.0) || !std::isfinite(classes) || !std::isfinite(layers))
    throw Error(ErrorCode::InvalidArchitectureParams, "class count and layer count must be >= 1");
  return (classes / 80.0) * (3.0 / layers);
}

inline double normalize_loss(double raw_loss, double classes, double layers) {
  return raw_loss / loss_alpha(classes, layers);
}

// ---------------------------------------------------------------------------
// Prediction import/export: one JSON object per line with sample_id,
// true_class, predicted_class, probabilities and optionally model_id and
// training_images.

inline nlohmann::ordered_json to_json(const PredictionRecord& r) {
  nlohmann::ordered_json j;
  j["sample_id"] = r.sample_id;
  j["true_class"] = r.true_class;
  j["predicted_class"] = r.predicted_class;
  j["probabilities"] = r.probabilities;
  if (!r.model_id.empty()) j["model_id"] = r.model_id;
  if (r.training_images > 0) j["training_images"] = r.training_images;
  return j;
}

inline void write_predictions(const std::vector<PredictionRecord>& records, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::UnreadableFile, "cannot write " + path);
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

inline std::vector<PredictionRecord> read_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MalformedImport, "cannot open prediction file " + path);
  std::vector<PredictionRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    const auto where = path + ":" + std::to_string(lineno);
    if (j.is_discarded() || !j.is_object()) throw Error(ErrorCode::MalformedImport, where + ": not a JSON object");
    PredictionRecord r;
    try {
      r.sample_id = j.at("sample_id").get<std::string>();
      r.true_class = j.at("true_class").get<std::string>();
      r.predicted_class = j.at("predicted_class").get<std::string>();
      if (j.contains("probabilities")) r.probabilities = j.at("probabilities").get<std::vector<double>>();
      r.model_id = j.value("model_id", std::string{});
      r.training_images = j.value("training_images", 0);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::MalformedImport, where + ": " + e.what());
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace dishwx::eval
