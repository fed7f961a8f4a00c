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

// Dataset manifests are JSON Lines. The first line is a header record
// ({"manifest": "dishwx", ...}); every following line is one sample with
// relative_path, dish_condition, background_condition, split,
// source_cutout_id, combination_index, rng_stream_id and, when present,
// annotation_path and preprocessed_by. Paths are relative to the manifest.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dishwx/error.hpp"
#include "dishwx/image.hpp"

namespace dishwx::forge {

enum class Scenario { Initial, Extended };

constexpr std::string_view to_string(Scenario s) { return s == Scenario::Initial ? "initial" : "extended"; }

inline Scenario parse_scenario(std::string_view s) {
  if (s == "initial") return Scenario::Initial;
  if (s == "extended") return Scenario::Extended;
  throw Error(ErrorCode::InvalidConfig, "unknown scenario '" + std::string(s) + "'");
}

/// Class vocabulary of a scenario, in class-index order.
inline std::vector<DishCondition> dish_conditions(Scenario s) {
  if (s == Scenario::Initial) return {DishCondition::Snow, DishCondition::Normal};
  return {DishCondition::Snow, DishCondition::Wet, DishCondition::Normal};
}

struct DatasetManifest {
  Scenario scenario = Scenario::Initial;
  std::uint64_t seed = 0;
  int per_combination = 0;
  std::vector<LabeledSample> samples;
  /// Directory sample paths are relative to. Not serialized.
  std::string root;

  std::string resolve(const std::string& relative) const {
    return (std::filesystem::path(root) / relative).string();
  }

  /// Class index of a sample within the scenario vocabulary.
  int class_index(const LabeledSample& s) const {
    const auto v = dish_conditions(scenario);
    for (std::size_t i = 0; i < v.size(); ++i)
      if (v[i] == s.dish_condition) return static_cast<int>(i);
    throw Error(ErrorCode::UnknownClassLabel, std::string(to_string(s.dish_condition)) + " is not valid in the " +
                                                  std::string(to_string(scenario)) + " scenario");
  }

  std::map<std::pair<DishCondition, BackgroundCondition>, int> combination_counts() const {
    std::map<std::pair<DishCondition, BackgroundCondition>, int> counts;
    for (const auto& s : samples) ++counts[{s.dish_condition, s.background_condition}];
    return counts;
  }

  bool balanced() const {
    const auto counts = combination_counts();
    if (counts.empty()) return true;
    for (const auto& [k, v] : counts)
      if (v != counts.begin()->second) return false;
    return true;
  }
};

inline nlohmann::ordered_json sample_to_json(const LabeledSample& s) {
  nlohmann::ordered_json j;
  j["relative_path"] = s.image_path;
  j["dish_condition"] = to_string(s.dish_condition);
  j["background_condition"] = to_string(s.background_condition);
  j["split"] = to_string(s.split);
  j["source_cutout_id"] = s.source_cutout_id;
  j["combination_index"] = s.combination_index;
  j["rng_stream_id"] = hex64(s.rng_stream_id);
  if (!s.annotation_path.empty()) j["annotation_path"] = s.annotation_path;
  if (!s.preprocessed_by.empty()) j["preprocessed_by"] = s.preprocessed_by;
  return j;
}

inline std::string serialize_manifest(const DatasetManifest& m) {
  std::ostringstream out;
  nlohmann::ordered_json h;
  h["manifest"] = "dishwx";
  h["version"] = 1;
  h["scenario"] = to_string(m.scenario);
  h["seed"] = m.seed;
  h["per_combination"] = m.per_combination;
  h["count"] = m.samples.size();
  out << h.dump() << '\n';
  for (const auto& s : m.samples) out << sample_to_json(s).dump() << '\n';
  return out.str();
}

inline void write_manifest(const DatasetManifest& m, const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream(path, std::ios::binary) << serialize_manifest(m);
}

/// Reads a manifest; `root` becomes the manifest's directory. With
/// `check_paths`, every referenced image must exist.
inline DatasetManifest read_manifest(const std::string& path, bool check_paths = true) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MalformedManifest, "cannot open manifest " + path);
  DatasetManifest m;
  m.root = std::filesystem::path(path).parent_path().string();
  std::string line;
  int lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object())
      throw Error(ErrorCode::MalformedManifest, path + ":" + std::to_string(lineno) + ": not a JSON object");
    try {
      if (j.contains("manifest")) {
        m.scenario = parse_scenario(j.at("scenario").get<std::string>());
        m.seed = j.at("seed").get<std::uint64_t>();
        m.per_combination = j.value("per_combination", 0);
        header = true;
        continue;
      }
      LabeledSample s;
      s.image_path = j.at("relative_path").get<std::string>();
      s.dish_condition = parse_dish_condition(j.at("dish_condition").get<std::string>());
      s.background_condition = parse_background_condition(j.at("background_condition").get<std::string>());
      s.split = parse_split(j.at("split").get<std::string>());
      s.source_cutout_id = j.at("source_cutout_id").get<std::string>();
      s.combination_index = j.value("combination_index", 0);
      s.rng_stream_id = std::stoull(j.value("rng_stream_id", std::string("0")), nullptr, 16);
      s.annotation_path = j.value("annotation_path", std::string());
      s.preprocessed_by = j.value("preprocessed_by", std::string());
      if (check_paths && !std::filesystem::exists(m.resolve(s.image_path)))
        throw Error(ErrorCode::MalformedManifest, path + ":" + std::to_string(lineno) + ": missing image " + s.image_path);
      m.samples.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::MalformedManifest, path + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      if (e.code() == ErrorCode::MalformedManifest) throw;
      throw Error(ErrorCode::MalformedManifest, path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!header) throw Error(ErrorCode::MalformedManifest, path + ": missing header record");
  return m;
}

}  // namespace dishwx::forge
