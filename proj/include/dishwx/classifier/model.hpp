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

// Transfer-learning classifier: a frozen pre-trained ResNet feature extractor
// (final classification layer removed) followed by a trainable head
// FC(D -> 128) -> ReLU -> Dropout -> FC(128 -> C).

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dishwx/classifier/loss.hpp"
#include "dishwx/complexity/profiler.hpp"
#include "dishwx/error.hpp"
#include "dishwx/hash.hpp"
#include "dishwx/image.hpp"
#include "dishwx/nn/resnet.hpp"
#include "dishwx/nn/tensor_store.hpp"
#include "dishwx/rng.hpp"

namespace dishwx::tl {

inline constexpr int kHiddenUnits = 128;
inline constexpr int kInputSize = 300;
inline constexpr const char* kWeightsCacheEnv = "DISHWX_WEIGHTS_CACHE";
inline constexpr const char* kPretrainedFileName = "resnet50.dwt";

// ---------------------------------------------------------------------------
// Weights manifest

struct LayerEntry {
  std::string name;
  std::int64_t parameters = 0;
  std::string hash;
  bool trainable = false;
  friend bool operator==(const LayerEntry&, const LayerEntry&) = default;
};

/// Ordered (layer, parameter count, content hash, trainable) records. Used to
/// verify that frozen layers never move.
struct WeightsManifest {
  std::vector<LayerEntry> layers;

  std::string digest() const {
    Fnv1a64 h;
    for (const auto& l : layers) {
      h.update(l.name);
      h.update(l.hash);
      h.update(l.trainable ? "1" : "0");
    }
    return hex64(h.digest());
  }

  const LayerEntry* find(const std::string& name) const {
    for (const auto& l : layers)
      if (l.name == name) return &l;
    return nullptr;
  }

  nlohmann::ordered_json to_json() const {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& l : layers)
      arr.push_back({{"name", l.name}, {"parameters", l.parameters}, {"hash", l.hash}, {"trainable", l.trainable}});
    return arr;
  }

  static WeightsManifest from_json(const nlohmann::json& j) {
    WeightsManifest m;
    for (const auto& e : j)
      m.layers.push_back({e.at("name").get<std::string>(), e.at("parameters").get<std::int64_t>(),
                          e.at("hash").get<std::string>(), e.at("trainable").get<bool>()});
    return m;
  }
};

/// Names of layers whose hash differs between two manifests of one model,
/// optionally restricted to a name prefix.
inline std::vector<std::string> changed_layers(const WeightsManifest& before, const WeightsManifest& after,
                                               const std::string& prefix = "") {
  std::vector<std::string> out;
  for (const auto& a : after.layers) {
    if (!a.name.starts_with(prefix)) continue;
    const auto* b = before.find(a.name);
    if (!b || b->hash != a.hash) out.push_back(a.name);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Backbone provenance

struct BackboneSource {
  enum class Kind { Pretrained, Seeded };
  Kind kind = Kind::Pretrained;
  std::string path;          // Pretrained
  std::uint64_t seed = 0;    // Seeded
  nn::ResNetConfig config;

  static BackboneSource pretrained(std::string path, nn::ResNetConfig cfg = {}) {
    return {Kind::Pretrained, std::move(path), 0, cfg};
  }
  /// He-initialised stand-in whose batch-norm statistics are calibrated on
  /// the training images. For pipelines without access to pre-trained weights.
  static BackboneSource seeded(std::uint64_t seed, nn::ResNetConfig cfg = {}) {
    return {Kind::Seeded, {}, seed, cfg};
  }

  /// Explicit path if given, otherwise $DISHWX_WEIGHTS_CACHE/resnet50.dwt.
  static BackboneSource resolve(const std::string& explicit_path = "") {
    std::string path = explicit_path;
    if (path.empty()) {
      if (const char* dir = std::getenv(kWeightsCacheEnv))
        path = (std::filesystem::path(dir) / kPretrainedFileName).string();
    }
    if (path.empty() || !std::filesystem::exists(path))
      throw Error(ErrorCode::MissingPretrainedWeights,
                  path.empty() ? std::string("no weights path given and $") + kWeightsCacheEnv + " is unset"
                               : "pre-trained weights not found at " + path);
    return pretrained(path);
  }
};

// ---------------------------------------------------------------------------
// Head

using RowMatrix = nn::RowMatrix;

struct Head {
  RowMatrix w1;  // hidden x in
  Eigen::VectorXf b1;
  RowMatrix w2;  // classes x hidden
  Eigen::VectorXf b2;

  Head() = default;
  Head(int in, int hidden, int classes) : w1(hidden, in), b1(hidden), w2(classes, hidden), b2(classes) {}

  int in_features() const { return static_cast<int>(w1.cols()); }
  int classes() const { return static_cast<int>(w2.rows()); }

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  void initialize(std::uint64_t seed) {
    Rng rng(derive_stream(seed, {0x4EAD}));
    auto fill = [&](float* p, Eigen::Index n, double fan_in) {
      const double bound = 1.0 / std::sqrt(fan_in);
      for (Eigen::Index i = 0; i < n; ++i) p[i] = static_cast<float>(rng.uniform(-bound, bound));
    };
    fill(w1.data(), w1.size(), static_cast<double>(w1.cols()));
    fill(b1.data(), b1.size(), static_cast<double>(w1.cols()));
    fill(w2.data(), w2.size(), static_cast<double>(w2.cols()));
    fill(b2.data(), b2.size(), static_cast<double>(w2.cols()));
  }

  /// Eval-mode logits (dropout is the identity).
  std::vector<double> logits(std::span<const float> features) const {
    Eigen::Map<const Eigen::VectorXf> x(features.data(), static_cast<Eigen::Index>(features.size()));
    const Eigen::VectorXf h = (w1 * x + b1).cwiseMax(0.0f);
    const Eigen::VectorXf z = w2 * h + b2;
    return {z.data(), z.data() + z.size()};
  }
};

// ---------------------------------------------------------------------------
// Model

class ClassifierModel {
 public:
  /// An empty model; every query throws ModelNotLoaded until built or loaded.
  ClassifierModel() = default;

  /// Builds backbone + fresh head for `classes` outputs. Throws
  /// MissingPretrainedWeights when a pretrained source has no file.
  static ClassifierModel build(int classes, const BackboneSource& source, std::uint64_t head_seed = 0,
                               int input_size = kInputSize) {
    if (classes < 2) throw Error(ErrorCode::InvalidClassCount, "need at least 2 classes, got " + std::to_string(classes));
    if (input_size < 32) throw Error(ErrorCode::InvalidDimensions, "input size must be >= 32");
    ClassifierModel m;
    m.source_ = source;
    m.input_size_ = input_size;
    if (source.kind == BackboneSource::Kind::Pretrained) {
      if (source.path.empty() || !std::filesystem::exists(source.path))
        throw Error(ErrorCode::MissingPretrainedWeights, "pre-trained weights not found at '" + source.path + "'");
      m.backbone_.emplace(nn::ResNetBackbone::from_store(nn::TensorStore::read(source.path), source.config));
      m.calibrated_ = true;
    } else {
      m.backbone_.emplace(nn::ResNetBackbone::seeded(source.seed, source.config));
      m.calibrated_ = false;
    }
    m.head_ = Head(m.backbone_->feature_dim(), kHiddenUnits, classes);
    m.head_.initialize(head_seed);
    m.loaded_ = true;
    return m;
  }

  int classes() const { return head_.classes(); }
  int feature_dim() const { return backbone().feature_dim(); }
  int input_size() const { return input_size_; }
  const BackboneSource& source() const { return source_; }
  bool loaded() const { return loaded_; }

  /// Partial freezing: backbone learning rate zero, head trainable.
  void freeze_backbone() { backbone_frozen_ = true; }
  bool backbone_frozen() const { return backbone_frozen_; }

  bool needs_calibration() const { return !calibrated_; }
  void calibrate_backbone(const std::vector<Image>& images) {
    std::vector<nn::Tensor> batch;
    batch.reserve(images.size());
    for (const auto& img : images) batch.push_back(nn::to_input_tensor(img, input_size_));
    backbone().calibrate(std::move(batch));
    calibrated_ = true;
  }
  void mark_calibrated() { calibrated_ = true; }

  nn::ResNetBackbone& backbone() {
    require_loaded();
    return *backbone_;
  }
  const nn::ResNetBackbone& backbone() const {
    require_loaded();
    return *backbone_;
  }
  Head& head() { return head_; }
  const Head& head() const { return head_; }

  /// Backbone output (length feature_dim()) for one image.
  std::vector<float> extract_features(const Image& img) const {
    require_loaded();
    return backbone_->features(nn::to_input_tensor(img, input_size_));
  }

  std::vector<double> predict_from_features(std::span<const float> features) const {
    require_loaded();
    const auto z = head_.logits(features);
    return softmax(z);
  }

  /// Class probabilities, eval mode.
  std::vector<double> predict(const Image& img) const {
    const auto f = extract_features(img);
    return predict_from_features(f);
  }

  WeightsManifest manifest() const {
    WeightsManifest m;
    for (const auto& g : backbone().parameter_groups()) {
      Fnv1a64 h;
      std::int64_t n = 0;
      for (const auto& t : g.tensors) {
        h.update_values(std::span<const float>(*t.values));
        // Running statistics are buffers, not parameters.
        if (t.name.find("running_") == std::string::npos) n += static_cast<std::int64_t>(t.values->size());
      }
      m.layers.push_back({"backbone." + g.module, n, hex64(h.digest()), !backbone_frozen_});
    }
    auto dense = [&](const std::string& name, const RowMatrix& w, const Eigen::VectorXf& b) {
      Fnv1a64 h;
      h.update_values(std::span<const float>(w.data(), static_cast<std::size_t>(w.size())));
      h.update_values(std::span<const float>(b.data(), static_cast<std::size_t>(b.size())));
      m.layers.push_back({name, static_cast<std::int64_t>(w.size() + b.size()), hex64(h.digest()), true});
    };
    dense("head.fc1", head_.w1, head_.b1);
    dense("head.fc2", head_.w2, head_.b2);
    return m;
  }

  /// Backbone + head as an analytic model description.
  complexity::ModelDescription describe() const {
    using complexity::Layer;
    using complexity::LayerKind;
    auto d = backbone().describe();
    d.name = "resnet+fc";
    d.layers.push_back(Layer::linear("head.fc1", feature_dim(), kHiddenUnits));
    d.layers.push_back(Layer::simple("head.relu", LayerKind::ReLU));
    d.layers.push_back(Layer::simple("head.dropout", LayerKind::Dropout));
    d.layers.push_back(Layer::linear("head.fc2", kHiddenUnits, classes()));
    d.layers.push_back(Layer::simple("head.softmax", LayerKind::Softmax));
    return d;
  }

 private:
  void require_loaded() const {
    if (!loaded_) throw Error(ErrorCode::ModelNotLoaded, "classifier model is not built or loaded");
  }

  BackboneSource source_;
  std::optional<nn::ResNetBackbone> backbone_;
  Head head_;
  int input_size_ = kInputSize;
  bool backbone_frozen_ = false;
  bool calibrated_ = false;
  bool loaded_ = false;
};

}  // namespace dishwx::tl
