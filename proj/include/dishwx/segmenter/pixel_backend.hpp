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

// A small trainable segmentation backend: a per-pixel logistic model over
// local colour/texture features. Instances are 4-connected components of the
// thresholded probability map. It is trained under the same weighted
// cls/box/mask objective as a one-stage instance segmenter:
//
//   L_mask  mean per-pixel binary cross-entropy against the union GT mask
//   L_cls   binary cross-entropy of the peak pixel score against "dish present"
//   L_box   smooth-L1 between the probability-weighted box (centre and
//           sqrt(12 * variance) extents, normalised by image size) and the GT
//           union box

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dishwx/hash.hpp"
#include "dishwx/image_io.hpp"
#include "dishwx/rng.hpp"
#include "dishwx/segmenter/annotation.hpp"
#include "dishwx/segmenter/segmentation.hpp"
#include "dishwx/transform.hpp"

namespace dishwx::seg {

inline constexpr int kPixelFeatures = 16;
using PixelWeights = std::array<double, kPixelFeatures>;

namespace detail {

// Row-major [pixel][feature] matrix.
inline std::vector<double> pixel_features(const Image& img) {
  const int w = img.width(), h = img.height();
  const std::size_t n = img.pixel_count();
  const int r = 3;
  // Integral images of r, g, b, lum, lum^2.
  std::vector<double> integ(static_cast<std::size_t>(w + 1) * (h + 1) * 5, 0.0);
  auto I = [&](int x, int y, int k) -> double& { return integ[(static_cast<std::size_t>(y) * (w + 1) + x) * 5 + k]; };
  std::vector<double> lum(n);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::uint8_t* p = img.pixel(x, y);
      const double v[3] = {p[0] / 255.0, p[1] / 255.0, p[2] / 255.0};
      const double l = 0.299 * v[0] + 0.587 * v[1] + 0.114 * v[2];
      lum[static_cast<std::size_t>(y) * w + x] = l;
      const double vals[5] = {v[0], v[1], v[2], l, l * l};
      for (int k = 0; k < 5; ++k) I(x + 1, y + 1, k) = vals[k] + I(x, y + 1, k) + I(x + 1, y, k) - I(x, y, k);
    }
  }
  std::vector<double> f(n * kPixelFeatures);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int x0 = std::max(0, x - r), x1 = std::min(w, x + r + 1);
      const int y0 = std::max(0, y - r), y1 = std::min(h, y + r + 1);
      const double area = static_cast<double>((x1 - x0) * (y1 - y0));
      double box[5];
      for (int k = 0; k < 5; ++k) box[k] = (I(x1, y1, k) - I(x0, y1, k) - I(x1, y0, k) + I(x0, y0, k)) / area;
      const std::uint8_t* p = img.pixel(x, y);
      const double cr = p[0] / 255.0, cg = p[1] / 255.0, cb = p[2] / 255.0;
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const double gx = lum[static_cast<std::size_t>(y) * w + std::min(w - 1, x + 1)] -
                        lum[static_cast<std::size_t>(y) * w + std::max(0, x - 1)];
      const double gy = lum[static_cast<std::size_t>(std::min(h - 1, y + 1)) * w + x] -
                        lum[static_cast<std::size_t>(std::max(0, y - 1)) * w + x];
      const double stdev = std::sqrt(std::max(0.0, box[4] - box[3] * box[3]));
      const double sat = std::max({cr, cg, cb}) - std::min({cr, cg, cb});
      double* o = &f[i * kPixelFeatures];
      o[0] = 1.0;
      o[1] = cr;
      o[2] = cg;
      o[3] = cb;
      o[4] = box[0];
      o[5] = box[1];
      o[6] = box[2];
      o[7] = stdev * 4.0;
      o[8] = std::sqrt(gx * gx + gy * gy);
      o[9] = sat;
      o[10] = cr * cr;
      o[11] = cg * cg;
      o[12] = cb * cb;
      o[13] = cb - 0.5 * (cr + cg);
      o[14] = box[3] - lum[i];
      o[15] = (static_cast<double>(y) + 0.5) / h;
    }
  }
  return f;
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

inline double bce(double p, double t) {
  constexpr double eps = 1e-12;
  return -(t * std::log(std::max(p, eps)) + (1.0 - t) * std::log(std::max(1.0 - p, eps)));
}

inline double smooth_l1(double d, double beta, double* grad) {
  const double a = std::abs(d);
  if (a < beta) {
    *grad = d / beta;
    return 0.5 * d * d / beta;
  }
  *grad = d > 0 ? 1.0 : -1.0;
  return a - 0.5 * beta;
}

}  // namespace detail

/// Loss components and their gradient with respect to the model weights for
/// one image. `features` is the row-major output of pixel_features.
struct PixelLossResult {
  LossComponents components;
  double total = 0.0;
  PixelWeights gradient{};
};

inline PixelLossResult pixel_loss(const PixelWeights& weights, const std::vector<double>& features, int width,
                                  int height, const BinaryMask& target, const LossWeights& lw) {
  const std::size_t n = static_cast<std::size_t>(width) * height;
  std::vector<double> z(n), p(n), dz(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    const double* f = &features[i * kPixelFeatures];
    for (int k = 0; k < kPixelFeatures; ++k) s += weights[k] * f[k];
    z[i] = s;
    p[i] = detail::sigmoid(s);
  }
  PixelLossResult r;
  auto bits = target.bits();

  // mask
  double lm = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    lm += detail::bce(p[i], bits[i]);
    dz[i] += lw.mask * (p[i] - bits[i]) / static_cast<double>(n);
  }
  r.components.mask = lm / static_cast<double>(n);

  // cls on the peak logit
  const auto gt_box = bounding_box(target);
  const double present = gt_box ? 1.0 : 0.0;
  const std::size_t peak = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
  r.components.cls = detail::bce(p[peak], present);
  dz[peak] += lw.cls * (p[peak] - present);

  // box from probability moments
  double P = 0.0;
  for (double v : p) P += v;
  if (gt_box && P > 1e-9) {
    double mx = 0.0, my = 0.0;
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const double v = p[static_cast<std::size_t>(y) * width + x];
        mx += v * (x + 0.5) / width;
        my += v * (y + 0.5) / height;
      }
    const double cx = mx / P, cy = my / P;
    double vx = 0.0, vy = 0.0;
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const double v = p[static_cast<std::size_t>(y) * width + x];
        const double dx = (x + 0.5) / width - cx, dy = (y + 0.5) / height - cy;
        vx += v * dx * dx;
        vy += v * dy * dy;
      }
    vx /= P;
    vy /= P;
    const double bw = std::sqrt(12.0 * vx + 1e-12), bh = std::sqrt(12.0 * vy + 1e-12);
    const double tcx = 0.5 * (gt_box->x0 + gt_box->x1) / width, tcy = 0.5 * (gt_box->y0 + gt_box->y1) / height;
    const double tw = static_cast<double>(gt_box->width()) / width, th = static_cast<double>(gt_box->height()) / height;
    constexpr double beta = 0.1;
    double gcx, gcy, gw, gh;
    r.components.box = detail::smooth_l1(cx - tcx, beta, &gcx) + detail::smooth_l1(cy - tcy, beta, &gcy) +
                       detail::smooth_l1(bw - tw, beta, &gw) + detail::smooth_l1(bh - th, beta, &gh);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * width + x;
        const double dx = (x + 0.5) / width - cx, dy = (y + 0.5) / height - cy;
        const double dcx = dx / P, dcy = dy / P;
        const double dvx = (dx * dx - vx) / P, dvy = (dy * dy - vy) / P;
        const double dbw = 6.0 * dvx / bw, dbh = 6.0 * dvy / bh;
        const double dp = gcx * dcx + gcy * dcy + gw * dbw + gh * dbh;
        dz[i] += lw.box * dp * p[i] * (1.0 - p[i]);
      }
  }

  r.total = composite_loss(r.components, lw);
  for (std::size_t i = 0; i < n; ++i) {
    if (dz[i] == 0.0) continue;
    const double* f = &features[i * kPixelFeatures];
    for (int k = 0; k < kPixelFeatures; ++k) r.gradient[k] += dz[i] * f[k];
  }
  return r;
}

class PixelLogitBackend final : public SegmentationBackend {
 public:
  explicit PixelLogitBackend(double confidence_threshold = 0.5, double min_area_fraction = 0.002)
      : threshold_(confidence_threshold), min_area_fraction_(min_area_fraction) {}

  std::string name() const override { return "pixel-logit"; }
  bool trainable() const override { return true; }

  Checkpoint finetune(const std::vector<AnnotatedImage>& dataset, const SegmenterConfig& config,
                      const std::string& out_dir, const TraceSink& trace) override {
    if (dataset.empty()) throw Error(ErrorCode::EmptyDataset, "no annotated images to fine-tune on");
    config.validate();
    struct Example {
      std::vector<double> features;
      int w, h;
      BinaryMask target;
    };
    std::vector<Example> examples;
    for (const auto& a : dataset) {
      const Annotation ann = read_annotation(a.annotation_path);
      const Image img = to_rgb(load_image(a.image_path));
      if (img.width() != ann.width || img.height() != ann.height)
        throw Error(ErrorCode::MalformedAnnotation, a.annotation_path + ": size differs from image");
      BinaryMask u(ann.width, ann.height);
      for (const auto& m : annotation_masks(ann, a.annotation_path))
        for (int y = 0; y < m.height(); ++y)
          for (int x = 0; x < m.width(); ++x)
            if (m.get(x, y)) u.set(x, y, true);
      examples.push_back({detail::pixel_features(img), img.width(), img.height(), std::move(u)});
    }

    PixelWeights w{};
    PixelWeights m{}, v{};
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    Rng rng(derive_stream(config.seed, {0x5e9}));
    for (int it = 1; it <= config.iterations; ++it) {
      const Example& ex = examples[rng.below(examples.size())];
      const auto r = pixel_loss(w, ex.features, ex.w, ex.h, ex.target, config.weights);
      for (int k = 0; k < kPixelFeatures; ++k) {
        m[k] = b1 * m[k] + (1 - b1) * r.gradient[k];
        v[k] = b2 * v[k] + (1 - b2) * r.gradient[k] * r.gradient[k];
        const double mh = m[k] / (1 - std::pow(b1, it));
        const double vh = v[k] / (1 - std::pow(b2, it));
        w[k] -= config.learning_rate * mh / (std::sqrt(vh) + eps);
      }
      if (trace) trace(TrainingTrace{it, r.components, r.total}, config.weights);
    }
    weights_ = w;
    threshold_ = config.confidence_threshold;
    loaded_ = true;

    std::filesystem::create_directories(out_dir);
    const std::string path = (std::filesystem::path(out_dir) / "pixel_logit_checkpoint.json").string();
    nlohmann::json j;
    j["backend"] = name();
    j["weights"] = std::vector<double>(w.begin(), w.end());
    j["confidence_threshold"] = threshold_;
    j["min_area_fraction"] = min_area_fraction_;
    std::ofstream(path) << j.dump(1) << '\n';
    return Checkpoint{name(), path, file_hash(path)};
  }

  void load(const Checkpoint& checkpoint) override {
    std::ifstream in(checkpoint.path);
    if (!in) throw Error(ErrorCode::CheckpointMissing, "pixel-logit checkpoint not found: " + checkpoint.path);
    const auto j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded() || j.value("backend", "") != name())
      throw Error(ErrorCode::CheckpointMissing, "not a pixel-logit checkpoint: " + checkpoint.path);
    const auto w = j.at("weights").get<std::vector<double>>();
    if (w.size() != kPixelFeatures) throw Error(ErrorCode::CheckpointMissing, "weight count mismatch");
    std::copy(w.begin(), w.end(), weights_.begin());
    threshold_ = j.value("confidence_threshold", threshold_);
    min_area_fraction_ = j.value("min_area_fraction", min_area_fraction_);
    loaded_ = true;
  }

  bool loaded() const override { return loaded_; }

  const PixelWeights& weights() const { return weights_; }

  std::vector<double> probability_map(const Image& img) const {
    const Image rgb = to_rgb(img);
    const auto f = detail::pixel_features(rgb);
    std::vector<double> p(rgb.pixel_count());
    for (std::size_t i = 0; i < p.size(); ++i) {
      double s = 0.0;
      for (int k = 0; k < kPixelFeatures; ++k) s += weights_[k] * f[i * kPixelFeatures + k];
      p[i] = detail::sigmoid(s);
    }
    return p;
  }

  SegmentationResult segment(const Image& img) const override {
    if (!loaded_) throw Error(ErrorCode::CheckpointMissing, "pixel-logit backend not loaded");
    const int w = img.width(), h = img.height();
    const auto p = probability_map(img);
    std::vector<int> label(p.size(), -1);
    const auto min_area = static_cast<std::size_t>(min_area_fraction_ * static_cast<double>(p.size()));
    SegmentationResult r;
    std::vector<std::size_t> stack;
    int next = 0;
    for (std::size_t start = 0; start < p.size(); ++start) {
      if (p[start] < 0.5 || label[start] >= 0) continue;
      std::vector<std::size_t> members;
      stack.push_back(start);
      label[start] = next;
      while (!stack.empty()) {
        const std::size_t i = stack.back();
        stack.pop_back();
        members.push_back(i);
        const int x = static_cast<int>(i % w), y = static_cast<int>(i / w);
        const int nx[4] = {x - 1, x + 1, x, x};
        const int ny[4] = {y, y, y - 1, y + 1};
        for (int k = 0; k < 4; ++k) {
          if (nx[k] < 0 || ny[k] < 0 || nx[k] >= w || ny[k] >= h) continue;
          const std::size_t j = static_cast<std::size_t>(ny[k]) * w + nx[k];
          if (p[j] >= 0.5 && label[j] < 0) {
            label[j] = next;
            stack.push_back(j);
          }
        }
      }
      ++next;
      if (members.size() < std::max<std::size_t>(1, min_area)) continue;
      double conf = 0.0;
      BinaryMask m(w, h);
      for (std::size_t i : members) {
        conf += p[i];
        m.set(static_cast<int>(i % w), static_cast<int>(i / w), true);
      }
      conf /= static_cast<double>(members.size());
      if (conf < threshold_) continue;
      r.detections.push_back({std::move(m), conf, "dish"});
    }
    sort_by_confidence(r.detections);
    return r;
  }

 private:
  double threshold_;
  double min_area_fraction_;
  PixelWeights weights_{};
  bool loaded_ = false;
};

}  // namespace dishwx::seg
