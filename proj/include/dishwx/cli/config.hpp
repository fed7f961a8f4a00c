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

// Pipeline configuration: a JSON tree with defaults for every key, overridden
// by the config file, then by `--set dotted.key=value` pairs, then by
// dedicated command-line flags.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dishwx/classifier/train.hpp"
#include "dishwx/error.hpp"
#include "dishwx/forge/forge.hpp"
#include "dishwx/segmenter/segmentation.hpp"

namespace dishwx::cli {

using Json = nlohmann::ordered_json;

inline Json default_config() {
  return Json::parse(R"({
  "seed": 0,
  "jobs": 1,
  "paths": {
    "photos": "data/photos",
    "annotations": "data/photos",
    "cutouts": "data/cutouts",
    "backgrounds": "data/backgrounds",
    "output": "out"
  },
  "scenario": {
    "name": "initial",
    "per_combination": 10,
    "split_fraction": 0.7,
    "val_per_combination": 2,
    "test_size": 120
  },
  "composition": {"scale": [0.4, 0.8], "rotation": [-30.0, 30.0]},
  "segmenter": {
    "backend": "oracle",
    "checkpoint": "",
    "learning_rate": 0.002,
    "iterations": 30000,
    "confidence_threshold": 0.5,
    "weights": {"cls": 1.0, "box": 1.5, "mask": 6.125},
    "external": {"infer": "", "train": "", "work": ""}
  },
  "train": {
    "backbone": "pretrained",
    "weights": "",
    "learning_rate": 0.0002,
    "weight_decay": 0.0005,
    "epochs": 50,
    "batch_size": 16,
    "dropout": 0.5
  },
  "profile": {"input_px": 640, "batch_size": 16}
})");
}

/// Recursively merges `patch` into `base`; objects merge, everything else
/// replaces. Unknown keys are rejected so typos surface as InvalidConfig.
inline void merge_config(Json& base, const Json& patch, const std::string& prefix = "") {
  if (!patch.is_object()) throw Error(ErrorCode::InvalidConfig, "config" + (prefix.empty() ? "" : " key " + prefix) + " must be an object");
  for (const auto& [k, v] : patch.items()) {
    const auto key = prefix.empty() ? k : prefix + "." + k;
    if (!base.contains(k)) throw Error(ErrorCode::InvalidConfig, "unknown config key '" + key + "'");
    if (base[k].is_object())
      merge_config(base[k], v, key);
    else
      base[k] = v;
  }
}

/// Applies "a.b.c=value"; value is parsed as JSON, falling back to a string.
inline void apply_override(Json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw Error(ErrorCode::InvalidConfig, "override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  Json value = Json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  Json* node = &cfg;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const auto part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(part))
      throw Error(ErrorCode::InvalidConfig, "unknown config key '" + key + "'");
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (node->is_object()) throw Error(ErrorCode::InvalidConfig, "'" + key + "' is a section, not a value");
  *node = value;
}

inline Json load_config(const std::string& path, const std::vector<std::string>& overrides) {
  Json cfg = default_config();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::InvalidConfig, "cannot read config file " + path);
    const auto file = Json::parse(in, nullptr, false, true);
    if (file.is_discarded()) throw Error(ErrorCode::InvalidConfig, path + " is not valid JSON");
    merge_config(cfg, file);
  }
  for (const auto& o : overrides) apply_override(cfg, o);
  return cfg;
}

template <typename T>
T get(const Json& cfg, const std::string& dotted) {
  const Json* node = &cfg;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted.find('.', start);
    node = &node->at(dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  try {
    return node->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::InvalidConfig, "config key '" + dotted + "' has the wrong type");
  }
}

inline std::uint64_t seed_of(const Json& cfg) { return get<std::uint64_t>(cfg, "seed"); }

inline forge::ScenarioSpec scenario_spec(const Json& cfg) {
  forge::ScenarioSpec s;
  s.scenario = forge::parse_scenario(get<std::string>(cfg, "scenario.name"));
  s.per_combination = get<int>(cfg, "scenario.per_combination");
  s.seed = seed_of(cfg);
  if (s.per_combination < 1) throw Error(ErrorCode::InvalidConfig, "scenario.per_combination must be >= 1");
  return s;
}

inline forge::CompositionParams composition(const Json& cfg) {
  forge::CompositionParams p;
  const auto scale = get<std::vector<double>>(cfg, "composition.scale");
  const auto rot = get<std::vector<double>>(cfg, "composition.rotation");
  if (scale.size() != 2 || rot.size() != 2)
    throw Error(ErrorCode::InvalidConfig, "composition ranges must be [min, max]");
  p.scale_min = scale[0];
  p.scale_max = scale[1];
  p.rotation_min_deg = rot[0];
  p.rotation_max_deg = rot[1];
  p.validate();
  return p;
}

inline seg::SegmenterConfig segmenter_config(const Json& cfg) {
  seg::SegmenterConfig s;
  s.weights.cls = get<double>(cfg, "segmenter.weights.cls");
  s.weights.box = get<double>(cfg, "segmenter.weights.box");
  s.weights.mask = get<double>(cfg, "segmenter.weights.mask");
  s.learning_rate = get<double>(cfg, "segmenter.learning_rate");
  s.iterations = get<int>(cfg, "segmenter.iterations");
  s.confidence_threshold = get<double>(cfg, "segmenter.confidence_threshold");
  s.seed = seed_of(cfg);
  s.validate();
  return s;
}

inline tl::TrainConfig train_config(const Json& cfg, int classes) {
  tl::TrainConfig t;
  t.learning_rate = get<double>(cfg, "train.learning_rate");
  t.weight_decay = get<double>(cfg, "train.weight_decay");
  t.epochs = get<int>(cfg, "train.epochs");
  t.batch_size = get<int>(cfg, "train.batch_size");
  t.dropout = get<double>(cfg, "train.dropout");
  t.classes = classes;
  t.seed = seed_of(cfg);
  t.validate();
  return t;
}

/// Checks every section that can be checked without touching the disk.
inline void validate(const Json& cfg) {
  scenario_spec(cfg);
  composition(cfg);
  segmenter_config(cfg);
  train_config(cfg, 2);
  const auto backend = get<std::string>(cfg, "segmenter.backend");
  if (backend != "oracle" && backend != "pixel-logit" && backend != "external")
    throw Error(ErrorCode::InvalidConfig, "segmenter.backend must be oracle, pixel-logit or external");
  const auto bb = get<std::string>(cfg, "train.backbone");
  if (bb != "pretrained" && bb != "seeded")
    throw Error(ErrorCode::InvalidConfig, "train.backbone must be pretrained or seeded");
  const double f = get<double>(cfg, "scenario.split_fraction");
  if (!(f > 0.0 && f < 1.0)) throw Error(ErrorCode::InvalidConfig, "scenario.split_fraction must lie in (0,1)");
  if (get<int>(cfg, "jobs") < 1) throw Error(ErrorCode::InvalidConfig, "jobs must be >= 1");
  if (get<int>(cfg, "profile.input_px") < 32 || get<int>(cfg, "profile.batch_size") < 1)
    throw Error(ErrorCode::InvalidConfig, "profile.input_px must be >= 32 and profile.batch_size >= 1");
}

}  // namespace dishwx::cli
