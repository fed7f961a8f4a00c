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

// Fine-tuning loop for the classifier head. The backbone is frozen, so its
// features are computed once per image and reused for every epoch; the
// backbone's content hashes are still re-checked after every epoch.

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dishwx/classifier/loss.hpp"
#include "dishwx/classifier/model.hpp"
#include "dishwx/error.hpp"
#include "dishwx/forge/manifest.hpp"
#include "dishwx/image_io.hpp"
#include "dishwx/nn/tensor_store.hpp"
#include "dishwx/rng.hpp"

namespace dishwx::tl {

struct TrainConfig {
  double learning_rate = 2e-4;
  double weight_decay = 5e-4;
  int epochs = 50;
  int batch_size = 16;
  double dropout = 0.5;
  int classes = 2;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate >= 0.0)) throw Error(ErrorCode::InvalidConfig, "learning rate must be >= 0");
    if (weight_decay < 0.0) throw Error(ErrorCode::InvalidConfig, "weight decay must be >= 0");
    if (epochs < 1) throw Error(ErrorCode::InvalidConfig, "epochs must be >= 1");
    if (batch_size < 1) throw Error(ErrorCode::InvalidConfig, "batch size must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw Error(ErrorCode::InvalidConfig, "dropout must lie in [0,1)");
    if (classes < 2) throw Error(ErrorCode::InvalidClassCount, "need at least 2 classes");
  }
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;        // eval mode over the whole train set, end of epoch
  double train_batch_loss = 0.0;  // running mean of dropout mini-batch losses
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double seconds = 0.0;
  int backbone_layers_changed = 0;
};

struct TrainingReport {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  std::string initial_manifest_digest;
  std::string final_manifest_digest;
  /// Backbone layers whose content hash differs from epoch 0.
  int backbone_hash_delta = 0;
  int head_layers_changed = 0;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["best_epoch"] = best_epoch;
    j["initial_manifest_digest"] = initial_manifest_digest;
    j["final_manifest_digest"] = final_manifest_digest;
    j["backbone_hash_delta"] = backbone_hash_delta;
    j["head_layers_changed"] = head_layers_changed;
    auto arr = nlohmann::ordered_json::array();
    for (const auto& e : epochs)
      arr.push_back({{"epoch", e.epoch},
                     {"train_loss", e.train_loss},
                     {"train_batch_loss", e.train_batch_loss},
                     {"train_accuracy", e.train_accuracy},
                     {"val_loss", e.val_loss},
                     {"val_accuracy", e.val_accuracy},
                     {"seconds", e.seconds},
                     {"backbone_layers_changed", e.backbone_layers_changed}});
    j["epochs"] = arr;
    return j;
  }
};

/// Adam moments for the head, PyTorch semantics (L2 weight decay folded into
/// the gradient).
struct AdamState {
  RowMatrix m_w1, v_w1, m_w2, v_w2;
  Eigen::VectorXf m_b1, v_b1, m_b2, v_b2;
  std::int64_t step = 0;

  void reset(const Head& h) {
    m_w1 = v_w1 = RowMatrix::Zero(h.w1.rows(), h.w1.cols());
    m_w2 = v_w2 = RowMatrix::Zero(h.w2.rows(), h.w2.cols());
    m_b1 = v_b1 = Eigen::VectorXf::Zero(h.b1.size());
    m_b2 = v_b2 = Eigen::VectorXf::Zero(h.b2.size());
    step = 0;
  }
  bool matches(const Head& h) const { return m_w1.rows() == h.w1.rows() && m_w1.cols() == h.w1.cols() && m_w2.rows() == h.w2.rows(); }
};

struct HeadGradients {
  RowMatrix w1, w2;
  Eigen::VectorXf b1, b2;
};

/// One mini-batch forward/backward through the head. `keep` holds the
/// inverted-dropout multipliers (0 or 1/(1-p)) for each hidden unit, B x H;
/// pass an all-ones matrix for eval mode. Returns the mean loss.
inline double head_forward_backward(const Head& head, const RowMatrix& x, const std::vector<int>& labels,
                                    const RowMatrix& keep, HeadGradients* grads) {
  const Eigen::Index b = x.rows();
  RowMatrix pre = x * head.w1.transpose();
  pre.rowwise() += head.b1.transpose();
  const RowMatrix h = pre.cwiseMax(0.0f);
  const RowMatrix hd = h.cwiseProduct(keep);
  RowMatrix z = hd * head.w2.transpose();
  z.rowwise() += head.b2.transpose();

  double loss = 0.0;
  RowMatrix dz(b, z.cols());
  std::vector<double> logits(static_cast<std::size_t>(z.cols())), g;
  for (Eigen::Index i = 0; i < b; ++i) {
    for (Eigen::Index c = 0; c < z.cols(); ++c) logits[static_cast<std::size_t>(c)] = z(i, c);
    loss += softmax_cross_entropy(logits, labels[static_cast<std::size_t>(i)], &g);
    for (Eigen::Index c = 0; c < z.cols(); ++c) dz(i, c) = static_cast<float>(g[static_cast<std::size_t>(c)] / b);
  }
  if (grads) {
    grads->w2 = dz.transpose() * hd;
    grads->b2 = dz.colwise().sum().transpose();
    RowMatrix dh = (dz * head.w2).cwiseProduct(keep);
    dh = dh.cwiseProduct((pre.array() > 0.0f).cast<float>().matrix());
    grads->w1 = dh.transpose() * x;
    grads->b1 = dh.colwise().sum().transpose();
  }
  return loss / static_cast<double>(b);
}

inline void adam_step(Head& head, AdamState& st, HeadGradients g, double lr, double weight_decay) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++st.step;
  const float bc1 = static_cast<float>(1.0 - std::pow(b1, static_cast<double>(st.step)));
  const float bc2 = static_cast<float>(1.0 - std::pow(b2, static_cast<double>(st.step)));
  const float wd = static_cast<float>(weight_decay);
  const float a = static_cast<float>(lr);
  auto update = [&](auto& param, auto& grad, auto& m, auto& v) {
    grad += wd * param;
    m = static_cast<float>(b1) * m + static_cast<float>(1.0 - b1) * grad;
    v = static_cast<float>(b2) * v + static_cast<float>(1.0 - b2) * grad.cwiseProduct(grad);
    param.array() -= a * (m.array() / bc1) / ((v.array() / bc2).sqrt() + static_cast<float>(eps));
  };
  update(head.w1, g.w1, st.m_w1, st.v_w1);
  update(head.b1, g.b1, st.m_b1, st.v_b1);
  update(head.w2, g.w2, st.m_w2, st.v_w2);
  update(head.b2, g.b2, st.m_b2, st.v_b2);
}

// ---------------------------------------------------------------------------
// Checkpoints
//
//   <dir>/checkpoint.json       metadata: classes, input size, backbone
//                               provenance, epoch, best metrics
//   <dir>/weights.dwt           head tensors, Adam state, and for a seeded
//                               backbone its calibrated batch-norm tensors
//   <dir>/weights_manifest.json portable (layer, count, hash, trainable) list

struct CheckpointMeta {
  int epoch = 0;
  double val_accuracy = 0.0;
  double val_loss = 0.0;
};

inline void save_checkpoint(const ClassifierModel& model, const AdamState& adam, const CheckpointMeta& meta,
                            const std::string& dir) {
  std::filesystem::create_directories(dir);
  nn::TensorStore store;
  const Head& h = model.head();
  auto put_m = [&](const std::string& n, const RowMatrix& m) {
    store.put(n, {m.rows(), m.cols()}, std::vector<float>(m.data(), m.data() + m.size()));
  };
  auto put_v = [&](const std::string& n, const Eigen::VectorXf& v) {
    store.put(n, {v.size()}, std::vector<float>(v.data(), v.data() + v.size()));
  };
  put_m("head.fc1.weight", h.w1);
  put_v("head.fc1.bias", h.b1);
  put_m("head.fc2.weight", h.w2);
  put_v("head.fc2.bias", h.b2);
  if (adam.matches(h)) {
    put_m("adam.m.fc1.weight", adam.m_w1);
    put_m("adam.v.fc1.weight", adam.v_w1);
    put_v("adam.m.fc1.bias", adam.m_b1);
    put_v("adam.v.fc1.bias", adam.v_b1);
    put_m("adam.m.fc2.weight", adam.m_w2);
    put_m("adam.v.fc2.weight", adam.v_w2);
    put_v("adam.m.fc2.bias", adam.m_b2);
    put_v("adam.v.fc2.bias", adam.v_b2);
  }
  const auto& src = model.source();
  if (src.kind == BackboneSource::Kind::Seeded) {
    nn::TensorStore bn;
    model.backbone().export_to(bn, true);
    for (const auto& [name, t] : bn.tensors()) store.put("backbone." + name, t.shape, t.values);
  }
  const auto dpath = std::filesystem::path(dir);
  store.write((dpath / "weights.dwt").string());

  nlohmann::ordered_json j;
  j["format"] = "dishwx-classifier";
  j["classes"] = model.classes();
  j["input_size"] = model.input_size();
  j["hidden_units"] = kHiddenUnits;
  nlohmann::ordered_json b;
  b["kind"] = src.kind == BackboneSource::Kind::Seeded ? "seeded" : "pretrained";
  if (src.kind == BackboneSource::Kind::Seeded) {
    b["seed"] = src.seed;
  } else {
    b["path"] = std::filesystem::absolute(src.path).string();
    b["hash"] = file_hash(src.path);
  }
  b["blocks"] = src.config.blocks;
  b["base_width"] = src.config.base_width;
  j["backbone"] = b;
  j["backbone_frozen"] = model.backbone_frozen();
  j["epoch"] = meta.epoch;
  j["adam_step"] = adam.step;
  j["val_accuracy"] = meta.val_accuracy;
  j["val_loss"] = meta.val_loss;
  j["blob"] = "weights.dwt";
  j["blob_hash"] = file_hash((dpath / "weights.dwt").string());
  j["manifest"] = "weights_manifest.json";
  std::ofstream(dpath / "checkpoint.json") << j.dump(1) << '\n';
  std::ofstream(dpath / "weights_manifest.json") << model.manifest().to_json().dump(1) << '\n';
}

struct LoadedCheckpoint {
  ClassifierModel model;
  AdamState adam;
  CheckpointMeta meta;
};

inline LoadedCheckpoint load_checkpoint(const std::string& dir) {
  const auto dpath = std::filesystem::path(dir);
  std::ifstream in(dpath / "checkpoint.json");
  if (!in) throw Error(ErrorCode::ModelNotLoaded, "no classifier checkpoint in " + dir);
  const auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded() || j.value("format", "") != "dishwx-classifier")
    throw Error(ErrorCode::ModelNotLoaded, dir + ": not a classifier checkpoint");
  const auto& b = j.at("backbone");
  nn::ResNetConfig cfg;
  cfg.blocks = b.at("blocks").get<std::array<int, 4>>();
  cfg.base_width = b.at("base_width").get<int>();
  BackboneSource src = b.at("kind").get<std::string>() == "seeded"
                           ? BackboneSource::seeded(b.at("seed").get<std::uint64_t>(), cfg)
                           : BackboneSource::pretrained(b.at("path").get<std::string>(), cfg);
  if (src.kind == BackboneSource::Kind::Pretrained && b.contains("hash") && file_hash(src.path) != b.at("hash"))
    throw Error(ErrorCode::MalformedWeights, "pre-trained weights at " + src.path + " changed since the checkpoint");

  LoadedCheckpoint out;
  out.model = ClassifierModel::build(j.at("classes").get<int>(), src, 0, j.at("input_size").get<int>());
  const auto store = nn::TensorStore::read((dpath / j.value("blob", std::string("weights.dwt"))).string());
  Head& h = out.model.head();
  auto get_m = [&](const std::string& n, RowMatrix& m) {
    const auto& v = store.values(n, m.size());
    std::copy(v.begin(), v.end(), m.data());
  };
  auto get_v = [&](const std::string& n, Eigen::VectorXf& x) {
    const auto& v = store.values(n, x.size());
    std::copy(v.begin(), v.end(), x.data());
  };
  get_m("head.fc1.weight", h.w1);
  get_v("head.fc1.bias", h.b1);
  get_m("head.fc2.weight", h.w2);
  get_v("head.fc2.bias", h.b2);
  out.adam.reset(h);
  if (store.contains("adam.m.fc1.weight")) {
    get_m("adam.m.fc1.weight", out.adam.m_w1);
    get_m("adam.v.fc1.weight", out.adam.v_w1);
    get_v("adam.m.fc1.bias", out.adam.m_b1);
    get_v("adam.v.fc1.bias", out.adam.v_b1);
    get_m("adam.m.fc2.weight", out.adam.m_w2);
    get_m("adam.v.fc2.weight", out.adam.v_w2);
    get_v("adam.m.fc2.bias", out.adam.m_b2);
    get_v("adam.v.fc2.bias", out.adam.v_b2);
    out.adam.step = j.value("adam_step", std::int64_t{0});
  }
  if (src.kind == BackboneSource::Kind::Seeded) {
    nn::TensorStore bn;
    for (const auto& [name, t] : store.tensors())
      if (name.starts_with("backbone.")) bn.put(name.substr(9), t.shape, t.values);
    out.model.backbone().import_batch_norm(bn);
    out.model.mark_calibrated();
  }
  if (j.value("backbone_frozen", true)) out.model.freeze_backbone();
  out.meta.epoch = j.value("epoch", 0);
  out.meta.val_accuracy = j.value("val_accuracy", 0.0);
  out.meta.val_loss = j.value("val_loss", 0.0);
  return out;
}

// ---------------------------------------------------------------------------
// Training

struct TrainOptions {
  /// When set, "<dir>/best" (best validation accuracy, ties to lower
  /// validation loss) and "<dir>/last" are written.
  std::string checkpoint_dir;
  /// Continue from "<dir>/last": head, optimizer state and epoch numbering.
  bool resume = false;
  int calibration_images = 16;
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Decoded images of a manifest, in manifest order. Every sample must carry
/// mask-removal provenance.
inline std::vector<Image> load_preprocessed(const forge::DatasetManifest& m) {
  if (m.samples.empty()) throw Error(ErrorCode::EmptyManifest, "manifest has no samples");
  std::vector<Image> images;
  images.reserve(m.samples.size());
  for (const auto& s : m.samples) {
    if (s.preprocessed_by.empty())
      throw Error(ErrorCode::UnpreprocessedInput, s.image_path + " has not been through background removal");
    images.push_back(load_image(m.resolve(s.image_path)));
  }
  return images;
}

inline std::vector<int> manifest_labels(const forge::DatasetManifest& m) {
  std::vector<int> y;
  for (const auto& s : m.samples) y.push_back(m.class_index(s));
  return y;
}

inline RowMatrix feature_matrix(const ClassifierModel& model, const std::vector<Image>& images) {
  RowMatrix x(static_cast<Eigen::Index>(images.size()), model.feature_dim());
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto f = model.extract_features(images[i]);
    x.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXf>(f.data(), static_cast<Eigen::Index>(f.size()));
  }
  return x;
}

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

inline EvalResult evaluate_features(const Head& head, const RowMatrix& x, const std::vector<int>& y) {
  const RowMatrix keep = RowMatrix::Ones(x.rows(), head.w1.rows());
  EvalResult r;
  r.loss = head_forward_backward(head, x, y, keep, nullptr);
  int correct = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto z = head.logits(std::span<const float>(x.row(i).data(), static_cast<std::size_t>(x.cols())));
    const auto arg = std::max_element(z.begin(), z.end()) - z.begin();
    if (arg == y[static_cast<std::size_t>(i)]) ++correct;
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(x.rows());
  return r;
}

/// Trains the head on precomputed feature matrices. Exposed separately so
/// callers holding features (or tests) can skip the backbone.
inline TrainingReport train_on_features(ClassifierModel& model, const RowMatrix& x_train,
                                        const std::vector<int>& y_train, const RowMatrix& x_val,
                                        const std::vector<int>& y_val, const TrainConfig& cfg,
                                        const TrainOptions& opt = {}, AdamState* resume_state = nullptr,
                                        int start_epoch = 0, std::optional<CheckpointMeta> prior_best = std::nullopt) {
  cfg.validate();
  if (!model.backbone_frozen())
    throw Error(ErrorCode::InvalidConfig, "freeze_backbone() must run before training");
  if (cfg.classes != model.classes())
    throw Error(ErrorCode::InvalidClassCount, "config has " + std::to_string(cfg.classes) + " classes, model has " +
                                                  std::to_string(model.classes()));
  if (x_train.rows() == 0) throw Error(ErrorCode::EmptyManifest, "no training samples");
  if (x_val.rows() == 0) throw Error(ErrorCode::EmptyManifest, "no validation samples");

  AdamState adam;
  if (resume_state)
    adam = *resume_state;
  else
    adam.reset(model.head());

  TrainingReport report;
  const WeightsManifest initial = model.manifest();
  report.initial_manifest_digest = initial.digest();
  double best_acc = -1.0, best_loss = 0.0;
  if (prior_best) {
    best_acc = prior_best->val_accuracy;
    best_loss = prior_best->val_loss;
    report.best_epoch = prior_best->epoch;
  }

  const Eigen::Index n = x_train.rows();
  const int hidden = static_cast<int>(model.head().w1.rows());
  const float keep_scale = static_cast<float>(1.0 / (1.0 - cfg.dropout));
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (int e = 1; e <= cfg.epochs; ++e) {
    const int epoch = start_epoch + e;
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    Rng rng(derive_stream(cfg.seed, {0xE90C, static_cast<std::uint64_t>(epoch)}));
    rng.shuffle(order.begin(), order.end());
    double batch_loss_sum = 0.0;
    int batches = 0;
    for (Eigen::Index start = 0; start < n; start += cfg.batch_size) {
      const Eigen::Index bsz = std::min<Eigen::Index>(cfg.batch_size, n - start);
      RowMatrix xb(bsz, x_train.cols());
      std::vector<int> yb(static_cast<std::size_t>(bsz));
      for (Eigen::Index i = 0; i < bsz; ++i) {
        xb.row(i) = x_train.row(order[static_cast<std::size_t>(start + i)]);
        yb[static_cast<std::size_t>(i)] = y_train[static_cast<std::size_t>(order[static_cast<std::size_t>(start + i)])];
      }
      RowMatrix keep(bsz, hidden);
      for (Eigen::Index i = 0; i < keep.size(); ++i)
        keep.data()[i] = rng.uniform() < cfg.dropout ? 0.0f : keep_scale;
      HeadGradients g;
      batch_loss_sum += head_forward_backward(model.head(), xb, yb, keep, &g);
      ++batches;
      adam_step(model.head(), adam, std::move(g), cfg.learning_rate, cfg.weight_decay);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_batch_loss = batch_loss_sum / batches;
    const auto tr = evaluate_features(model.head(), x_train, y_train);
    const auto va = evaluate_features(model.head(), x_val, y_val);
    rec.train_loss = tr.loss;
    rec.train_accuracy = tr.accuracy;
    rec.val_loss = va.loss;
    rec.val_accuracy = va.accuracy;
    const WeightsManifest now = model.manifest();
    rec.backbone_layers_changed = static_cast<int>(changed_layers(initial, now, "backbone.").size());
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.epochs.push_back(rec);

    const bool better = rec.val_accuracy > best_acc || (rec.val_accuracy == best_acc && rec.val_loss < best_loss);
    if (better) {
      best_acc = rec.val_accuracy;
      best_loss = rec.val_loss;
      report.best_epoch = epoch;
      if (!opt.checkpoint_dir.empty())
        save_checkpoint(model, adam, {epoch, rec.val_accuracy, rec.val_loss},
                        (std::filesystem::path(opt.checkpoint_dir) / "best").string());
    }
    if (opt.on_epoch) opt.on_epoch(rec);
  }
  if (!opt.checkpoint_dir.empty()) {
    const auto& last = report.epochs.back();
    save_checkpoint(model, adam, {last.epoch, last.val_accuracy, last.val_loss},
                    (std::filesystem::path(opt.checkpoint_dir) / "last").string());
  }
  if (resume_state) *resume_state = adam;
  const WeightsManifest final_manifest = model.manifest();
  report.final_manifest_digest = final_manifest.digest();
  report.backbone_hash_delta = static_cast<int>(changed_layers(initial, final_manifest, "backbone.").size());
  report.head_layers_changed = static_cast<int>(changed_layers(initial, final_manifest, "head.").size());
  return report;
}

/// Full training from manifests of background-removed images. A seeded
/// stand-in backbone is calibrated on the first `calibration_images` training
/// images before any epoch runs.
inline TrainingReport train(ClassifierModel& model, const forge::DatasetManifest& train_set,
                            const forge::DatasetManifest& val_set, const TrainConfig& cfg,
                            const TrainOptions& opt = {}) {
  cfg.validate();
  int start_epoch = 0;
  AdamState adam;
  AdamState* resume = nullptr;
  std::optional<CheckpointMeta> prior_best;
  if (opt.resume) {
    if (opt.checkpoint_dir.empty()) throw Error(ErrorCode::InvalidConfig, "resume needs a checkpoint directory");
    auto ck = load_checkpoint((std::filesystem::path(opt.checkpoint_dir) / "last").string());
    model = std::move(ck.model);
    adam = ck.adam;
    resume = &adam;
    start_epoch = ck.meta.epoch;
    const auto best_json = std::filesystem::path(opt.checkpoint_dir) / "best" / "checkpoint.json";
    if (std::filesystem::exists(best_json)) {
      std::ifstream in(best_json);
      const auto j = nlohmann::json::parse(in, nullptr, false);
      if (!j.is_discarded())
        prior_best = CheckpointMeta{j.value("epoch", 0), j.value("val_accuracy", 0.0), j.value("val_loss", 0.0)};
    }
  }
  const auto train_images = load_preprocessed(train_set);
  const auto val_images = load_preprocessed(val_set);
  const auto y_train = manifest_labels(train_set);
  const auto y_val = manifest_labels(val_set);
  if (model.needs_calibration()) {
    const std::size_t k = std::min<std::size_t>(train_images.size(), static_cast<std::size_t>(std::max(1, opt.calibration_images)));
    model.calibrate_backbone(std::vector<Image>(train_images.begin(), train_images.begin() + static_cast<long>(k)));
  }
  const RowMatrix x_train = feature_matrix(model, train_images);
  const RowMatrix x_val = feature_matrix(model, val_images);
  return train_on_features(model, x_train, y_train, x_val, y_val, cfg, opt, resume, start_epoch, prior_best);
}

}  // namespace dishwx::tl
