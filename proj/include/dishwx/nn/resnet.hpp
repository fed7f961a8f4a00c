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

// Bottleneck ResNet feature extractor (ResNet50 at the default config) with
// inference-mode batch norm, laid out like torchvision so exported
// state_dicts load by name. The classification layer is not part of it: the
// output is the globally average-pooled final stage, 2048 wide by default.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <type_traits>
#include <string>
#include <vector>

#include "dishwx/complexity/profiler.hpp"
#include "dishwx/error.hpp"
#include "dishwx/image.hpp"
#include "dishwx/nn/tensor_store.hpp"
#include "dishwx/rng.hpp"
#include "dishwx/transform.hpp"

namespace dishwx::nn {

/// Single image activation, CHW, fp32.
struct Tensor {
  int c = 0, h = 0, w = 0;
  std::vector<float> data;

  Tensor() = default;
  Tensor(int c_, int h_, int w_) : c(c_), h(h_), w(w_), data(static_cast<std::size_t>(c_) * h_ * w_, 0.0f) {}
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  float* channel(int k) { return data.data() + k * plane(); }
  const float* channel(int k) const { return data.data() + k * plane(); }
};

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// ImageNet channel statistics the backbone was pre-trained with.
inline constexpr std::array<float, 3> kInputMean = {0.485f, 0.456f, 0.406f};
inline constexpr std::array<float, 3> kInputStd = {0.229f, 0.224f, 0.225f};

/// RGB(A) image -> normalized CHW tensor at size x size.
inline Tensor to_input_tensor(const Image& img, int size) {
  const Image rgb = to_rgb(img);
  const Image sized = (rgb.width() == size && rgb.height() == size) ? rgb : resize(rgb, size, size);
  Tensor t(3, size, size);
  const std::size_t n = t.plane();
  for (std::size_t i = 0; i < n; ++i)
    for (int k = 0; k < 3; ++k)
      t.data[k * n + i] = (sized.bytes()[i * 3 + k] / 255.0f - kInputMean[k]) / kInputStd[k];
  return t;
}

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in, int out, int kernel, int stride, int padding)
      : in_(in), out_(out), k_(kernel), stride_(stride), pad_(padding),
        weight_(static_cast<std::size_t>(out) * in * kernel * kernel, 0.0f) {}

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int kernel() const { return k_; }
  int stride() const { return stride_; }
  int padding() const { return pad_; }
  std::vector<float>& weight() { return weight_; }
  const std::vector<float>& weight() const { return weight_; }
  std::vector<std::int64_t> shape() const { return {out_, in_, k_, k_}; }

  Tensor forward(const Tensor& x) const {
    const int oh = (x.h + 2 * pad_ - k_) / stride_ + 1;
    const int ow = (x.w + 2 * pad_ - k_) / stride_ + 1;
    Tensor y(out_, oh, ow);
    const Eigen::Index cols = static_cast<Eigen::Index>(oh) * ow;
    const Eigen::Index rows = static_cast<Eigen::Index>(in_) * k_ * k_;
    Eigen::Map<const RowMatrix> w(weight_.data(), out_, rows);
    Eigen::Map<RowMatrix> out(y.data.data(), out_, cols);
    if (k_ == 1 && stride_ == 1 && pad_ == 0) {
      out.noalias() = w * Eigen::Map<const RowMatrix>(x.data.data(), in_, cols);
      return y;
    }
    thread_local std::vector<float> col;
    col.resize(static_cast<std::size_t>(rows * cols));
    for (int c = 0; c < in_; ++c) {
      const float* src = x.channel(c);
      for (int ky = 0; ky < k_; ++ky) {
        for (int kx = 0; kx < k_; ++kx) {
          float* dst = col.data() + ((static_cast<std::size_t>(c) * k_ + ky) * k_ + kx) * cols;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride_ - pad_ + ky;
            float* row = dst + static_cast<std::size_t>(oy) * ow;
            if (iy < 0 || iy >= x.h) {
              std::fill(row, row + ow, 0.0f);
              continue;
            }
            const float* srow = src + static_cast<std::size_t>(iy) * x.w;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride_ - pad_ + kx;
              row[ox] = (ix < 0 || ix >= x.w) ? 0.0f : srow[ix];
            }
          }
        }
      }
    }
    out.noalias() = w * Eigen::Map<const RowMatrix>(col.data(), rows, cols);
    return y;
  }

 private:
  int in_ = 0, out_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
  std::vector<float> weight_;
};

/// Inference-mode batch norm with optional fused ReLU.
class BatchNorm {
 public:
  BatchNorm() = default;
  explicit BatchNorm(int channels)
      : gamma_(channels, 1.0f), beta_(channels, 0.0f), mean_(channels, 0.0f), var_(channels, 1.0f) {}

  int channels() const { return static_cast<int>(gamma_.size()); }
  std::vector<float>& gamma() { return gamma_; }
  std::vector<float>& beta() { return beta_; }
  std::vector<float>& running_mean() { return mean_; }
  std::vector<float>& running_var() { return var_; }
  const std::vector<float>& gamma() const { return gamma_; }
  const std::vector<float>& beta() const { return beta_; }
  const std::vector<float>& running_mean() const { return mean_; }
  const std::vector<float>& running_var() const { return var_; }

  void apply(Tensor& x, bool relu) const {
    const std::size_t n = x.plane();
    for (int k = 0; k < x.c; ++k) {
      const float scale = gamma_[k] / std::sqrt(var_[k] + kEps);
      const float shift = beta_[k] - mean_[k] * scale;
      float* p = x.channel(k);
      if (relu)
        for (std::size_t i = 0; i < n; ++i) p[i] = std::max(0.0f, p[i] * scale + shift);
      else
        for (std::size_t i = 0; i < n; ++i) p[i] = p[i] * scale + shift;
    }
  }

  /// Sets running statistics to the batch statistics of `xs` (biased
  /// variance over images and positions).
  void calibrate(const std::vector<Tensor>& xs) {
    for (int k = 0; k < channels(); ++k) {
      double s = 0.0, s2 = 0.0, n = 0.0;
      for (const auto& x : xs) {
        const float* p = x.channel(k);
        for (std::size_t i = 0; i < x.plane(); ++i) {
          s += p[i];
          s2 += static_cast<double>(p[i]) * p[i];
        }
        n += static_cast<double>(x.plane());
      }
      const double m = s / n;
      mean_[k] = static_cast<float>(m);
      var_[k] = static_cast<float>(std::max(0.0, s2 / n - m * m));
    }
  }

  static constexpr float kEps = 1e-5f;

 private:
  std::vector<float> gamma_, beta_, mean_, var_;
};

inline Tensor max_pool_3x3_s2(const Tensor& x) {
  const int oh = (x.h + 2 - 3) / 2 + 1, ow = (x.w + 2 - 3) / 2 + 1;
  Tensor y(x.c, oh, ow);
  for (int k = 0; k < x.c; ++k) {
    const float* src = x.channel(k);
    float* dst = y.channel(k);
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        float m = -std::numeric_limits<float>::infinity();
        for (int dy = 0; dy < 3; ++dy) {
          const int iy = oy * 2 - 1 + dy;
          if (iy < 0 || iy >= x.h) continue;
          for (int dx = 0; dx < 3; ++dx) {
            const int ix = ox * 2 - 1 + dx;
            if (ix < 0 || ix >= x.w) continue;
            m = std::max(m, src[static_cast<std::size_t>(iy) * x.w + ix]);
          }
        }
        dst[static_cast<std::size_t>(oy) * ow + ox] = m;
      }
  }
  return y;
}

struct ResNetConfig {
  std::array<int, 4> blocks = {3, 4, 6, 3};
  int base_width = 64;
  int feature_dim() const { return base_width * 8 * 4; }
  friend bool operator==(const ResNetConfig&, const ResNetConfig&) = default;
};

/// One named parameter tensor of the backbone, torchvision naming.
struct ParamRef {
  std::string name;
  std::vector<std::int64_t> shape;
  const std::vector<float>* values;
};

/// Parameters grouped by module ("layer1.0.conv1", "layer1.0.bn1", ...).
struct ParamGroup {
  std::string module;
  std::vector<ParamRef> tensors;
};

class ResNetBackbone {
 public:
  struct Bottleneck {
    Conv2d conv1, conv2, conv3;
    BatchNorm bn1, bn2, bn3;
    std::optional<Conv2d> down_conv;
    std::optional<BatchNorm> down_bn;
  };

  explicit ResNetBackbone(ResNetConfig cfg = {}) : cfg_(cfg) {
    const int w = cfg.base_width;
    conv1_ = Conv2d(3, w, 7, 2, 3);
    bn1_ = BatchNorm(w);
    int in = w;
    for (int stage = 0; stage < 4; ++stage) {
      const int planes = w << stage;
      const int out = planes * 4;
      for (int b = 0; b < cfg.blocks[stage]; ++b) {
        const int stride = (b == 0 && stage > 0) ? 2 : 1;
        Bottleneck blk;
        blk.conv1 = Conv2d(in, planes, 1, 1, 0);
        blk.bn1 = BatchNorm(planes);
        blk.conv2 = Conv2d(planes, planes, 3, stride, 1);
        blk.bn2 = BatchNorm(planes);
        blk.conv3 = Conv2d(planes, out, 1, 1, 0);
        blk.bn3 = BatchNorm(out);
        if (b == 0) {
          blk.down_conv = Conv2d(in, out, 1, stride, 0);
          blk.down_bn = BatchNorm(out);
        }
        stages_[stage].push_back(std::move(blk));
        in = out;
      }
    }
  }

  const ResNetConfig& config() const { return cfg_; }
  int feature_dim() const { return cfg_.feature_dim(); }

  /// Loads torchvision-named tensors (missing "fc.*" is expected).
  static ResNetBackbone from_store(const TensorStore& store, ResNetConfig cfg = {}) {
    ResNetBackbone net(cfg);
    net.for_each_mutable([&](const std::string& name, std::vector<float>& values, const std::vector<std::int64_t>&) {
      const auto& src = store.values(name, static_cast<std::int64_t>(values.size()));
      values = src;
    });
    return net;
  }

  /// Deterministic He-initialised stand-in for pre-trained weights. Batch
  /// norm statistics are identity until calibrate() runs.
  static ResNetBackbone seeded(std::uint64_t seed, ResNetConfig cfg = {}) {
    ResNetBackbone net(cfg);
    std::uint64_t idx = 0;
    net.for_each_conv([&](const std::string&, Conv2d& conv) {
      Rng rng(derive_stream(seed, {0xBAC4B0E, idx++}));
      const double fan_out = static_cast<double>(conv.out_channels()) * conv.kernel() * conv.kernel();
      const double sd = std::sqrt(2.0 / fan_out);
      for (auto& v : conv.weight()) v = static_cast<float>(rng.normal() * sd);
    });
    return net;
  }

  /// Global-average-pooled features of a normalized input tensor.
  std::vector<float> features(const Tensor& input) const {
    std::vector<Tensor> batch{input};
    run(batch);
    return pool(batch.front());
  }

  /// Sets every batch-norm's running statistics from the activations the
  /// calibration batch produces at that point, front to back.
  void calibrate(std::vector<Tensor> inputs) {
    if (inputs.empty()) throw Error(ErrorCode::EmptyInput, "calibration needs at least one input");
    run_calibrating(inputs);
  }

  void export_to(TensorStore& store, bool batch_norm_only = false) const {
    for (const auto& g : parameter_groups()) {
      const bool is_bn = g.module.find("bn") != std::string::npos || g.module.ends_with("downsample.1");
      if (batch_norm_only && !is_bn) continue;
      for (const auto& t : g.tensors) store.put(t.name, t.shape, *t.values);
    }
  }

  /// Replaces batch-norm tensors present in `store`.
  void import_batch_norm(const TensorStore& store) {
    for_each_mutable([&](const std::string& name, std::vector<float>& values, const std::vector<std::int64_t>&) {
      if (name.find("running_") == std::string::npos && name.find("bn") == std::string::npos &&
          name.find("downsample.1") == std::string::npos)
        return;
      if (store.contains(name)) values = store.values(name, static_cast<std::int64_t>(values.size()));
    });
  }

  std::vector<ParamGroup> parameter_groups() const {
    std::vector<ParamGroup> groups;
    auto conv = [&](const std::string& module, const Conv2d& c) {
      groups.push_back({module, {{module + ".weight", c.shape(), &c.weight()}}});
    };
    auto bn = [&](const std::string& module, const BatchNorm& b) {
      const std::vector<std::int64_t> s{b.channels()};
      groups.push_back({module,
                        {{module + ".weight", s, &b.gamma()},
                         {module + ".bias", s, &b.beta()},
                         {module + ".running_mean", s, &b.running_mean()},
                         {module + ".running_var", s, &b.running_var()}}});
    };
    conv("conv1", conv1_);
    bn("bn1", bn1_);
    for (int s = 0; s < 4; ++s) {
      for (std::size_t b = 0; b < stages_[s].size(); ++b) {
        const auto& blk = stages_[s][b];
        const std::string p = "layer" + std::to_string(s + 1) + "." + std::to_string(b) + ".";
        conv(p + "conv1", blk.conv1);
        bn(p + "bn1", blk.bn1);
        conv(p + "conv2", blk.conv2);
        bn(p + "bn2", blk.bn2);
        conv(p + "conv3", blk.conv3);
        bn(p + "bn3", blk.bn3);
        if (blk.down_conv) {
          conv(p + "downsample.0", *blk.down_conv);
          bn(p + "downsample.1", *blk.down_bn);
        }
      }
    }
    return groups;
  }

  complexity::ModelDescription describe() const {
    using complexity::Layer;
    using complexity::LayerKind;
    auto bn = [](const std::string& n, int c) {
      Layer l = Layer::simple(n, LayerKind::BatchNorm);
      l.out_channels = c;
      return l;
    };
    auto cv = [](const std::string& n, const Conv2d& c) {
      return Layer::conv(n, c.in_channels(), c.out_channels(), c.kernel(), c.stride(), c.padding());
    };
    complexity::ModelDescription d{"resnet-backbone", {}};
    d.layers.push_back(cv("conv1", conv1_));
    d.layers.push_back(bn("bn1", conv1_.out_channels()));
    d.layers.push_back(Layer::simple("relu", LayerKind::ReLU));
    d.layers.push_back(Layer::max_pool("maxpool", 3, 2, 1));
    for (int s = 0; s < 4; ++s) {
      for (std::size_t b = 0; b < stages_[s].size(); ++b) {
        const auto& blk = stages_[s][b];
        const std::string p = "layer" + std::to_string(s + 1) + "." + std::to_string(b) + ".";
        std::vector<Layer> body = {cv(p + "conv1", blk.conv1), bn(p + "bn1", blk.conv1.out_channels()),
                                   Layer::simple(p + "relu1", LayerKind::ReLU), cv(p + "conv2", blk.conv2),
                                   bn(p + "bn2", blk.conv2.out_channels()),
                                   Layer::simple(p + "relu2", LayerKind::ReLU), cv(p + "conv3", blk.conv3),
                                   bn(p + "bn3", blk.conv3.out_channels())};
        std::vector<Layer> shortcut;
        if (blk.down_conv)
          shortcut = {cv(p + "downsample.0", *blk.down_conv), bn(p + "downsample.1", blk.down_conv->out_channels())};
        d.layers.push_back(Layer::residual(p + "block", std::move(body), std::move(shortcut)));
        d.layers.push_back(Layer::simple(p + "relu", LayerKind::ReLU));
      }
    }
    d.layers.push_back(Layer::simple("avgpool", LayerKind::GlobalAvgPool));
    d.layers.push_back(Layer::simple("flatten", LayerKind::Flatten));
    return d;
  }

 private:
  template <typename F>
  void for_each_conv(F&& f) {
    f("conv1", conv1_);
    for (int s = 0; s < 4; ++s)
      for (std::size_t b = 0; b < stages_[s].size(); ++b) {
        auto& blk = stages_[s][b];
        const std::string p = "layer" + std::to_string(s + 1) + "." + std::to_string(b) + ".";
        f(p + "conv1", blk.conv1);
        f(p + "conv2", blk.conv2);
        f(p + "conv3", blk.conv3);
        if (blk.down_conv) f(p + "downsample.0", *blk.down_conv);
      }
  }

  template <typename F>
  void for_each_mutable(F&& f) {
    for (const auto& g : parameter_groups())
      for (const auto& t : g.tensors) f(t.name, const_cast<std::vector<float>&>(*t.values), t.shape);
  }

  static void norm(const BatchNorm& bn, std::vector<Tensor>& xs, bool relu) {
    for (auto& x : xs) bn.apply(x, relu);
  }
  static void conv(const Conv2d& c, std::vector<Tensor>& xs) {
    for (auto& x : xs) x = c.forward(x);
  }

  // Shared forward. On a mutable network every batch norm first adopts the
  // batch's statistics (calibration); on a const one it is plain inference.
  template <typename Net>
  static void forward_impl(Net& net, std::vector<Tensor>& xs) {
    auto bn = [](auto& b, std::vector<Tensor>& v, bool relu) {
      if constexpr (!std::is_const_v<Net>) b.calibrate(v);
      norm(b, v, relu);
    };
    conv(net.conv1_, xs);
    bn(net.bn1_, xs, true);
    for (auto& x : xs) x = max_pool_3x3_s2(x);
    for (auto& stage : net.stages_) {
      for (auto& blk : stage) {
        std::vector<Tensor> identity;
        if (!blk.down_conv) identity = xs;
        else {
          identity.reserve(xs.size());
          for (const auto& x : xs) identity.push_back(blk.down_conv->forward(x));
          bn(*blk.down_bn, identity, false);
        }
        conv(blk.conv1, xs);
        bn(blk.bn1, xs, true);
        conv(blk.conv2, xs);
        bn(blk.bn2, xs, true);
        conv(blk.conv3, xs);
        bn(blk.bn3, xs, false);
        for (std::size_t i = 0; i < xs.size(); ++i) {
          auto& a = xs[i].data;
          const auto& b = identity[i].data;
          for (std::size_t j = 0; j < a.size(); ++j) a[j] = std::max(0.0f, a[j] + b[j]);
        }
      }
    }
  }

  void run(std::vector<Tensor>& xs) const { forward_impl(*this, xs); }
  void run_calibrating(std::vector<Tensor>& xs) { forward_impl(*this, xs); }

  static std::vector<float> pool(const Tensor& x) {
    std::vector<float> f(static_cast<std::size_t>(x.c));
    const std::size_t n = x.plane();
    for (int k = 0; k < x.c; ++k) {
      double s = 0.0;
      const float* p = x.channel(k);
      for (std::size_t i = 0; i < n; ++i) s += p[i];
      f[static_cast<std::size_t>(k)] = static_cast<float>(s / static_cast<double>(n));
    }
    return f;
  }

  ResNetConfig cfg_;
  Conv2d conv1_;
  BatchNorm bn1_;
  std::array<std::vector<Bottleneck>, 4> stages_;
};

}  // namespace dishwx::nn
