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

// Analytic cost accounting. Forward FLOPs are counted from layer shapes at
// 2 FLOPs per multiply-accumulate; only convolution and dense layers carry
// MACs. The mask remover is an elementwise pass costing W*H*C operations.
// Pipeline totals compose by summation (FLOPs) and by maximum (memory).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dishwx/error.hpp"

namespace dishwx::complexity {

enum class LayerKind {
  Conv2d,
  Linear,
  BatchNorm,
  ReLU,
  MaxPool,
  GlobalAvgPool,
  Flatten,
  Dropout,
  Softmax,
  Residual,  // body(x) + shortcut(x); empty shortcut is the identity
  MaskRemover,
};

struct Layer {
  std::string name;
  LayerKind kind = LayerKind::ReLU;
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;
  int stride = 1;
  int padding = 0;
  int groups = 1;
  std::vector<Layer> body;
  std::vector<Layer> shortcut;

  static Layer conv(std::string name, int in, int out, int k, int s, int p) {
    Layer l;
    l.name = std::move(name);
    l.kind = LayerKind::Conv2d;
    l.in_channels = in;
    l.out_channels = out;
    l.kernel = k;
    l.stride = s;
    l.padding = p;
    return l;
  }
  static Layer linear(std::string name, int in, int out) {
    Layer l;
    l.name = std::move(name);
    l.kind = LayerKind::Linear;
    l.in_channels = in;
    l.out_channels = out;
    return l;
  }
  static Layer simple(std::string name, LayerKind kind) {
    Layer l;
    l.name = std::move(name);
    l.kind = kind;
    return l;
  }
  static Layer max_pool(std::string name, int k, int s, int p) {
    Layer l = simple(std::move(name), LayerKind::MaxPool);
    l.kernel = k;
    l.stride = s;
    l.padding = p;
    return l;
  }
  static Layer residual(std::string name, std::vector<Layer> body, std::vector<Layer> shortcut = {}) {
    Layer l = simple(std::move(name), LayerKind::Residual);
    l.body = std::move(body);
    l.shortcut = std::move(shortcut);
    return l;
  }
};

struct ModelDescription {
  std::string name;
  std::vector<Layer> layers;
};

struct Shape {
  int c = 0, h = 0, w = 0;
  std::int64_t numel() const { return static_cast<std::int64_t>(c) * h * w; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

struct LayerCost {
  std::string name;
  double flops = 0.0;
  Shape output;
};

namespace detail {

inline int conv_out(int n, int k, int s, int p) { return (n + 2 * p - k) / s + 1; }

inline Shape propagate(const std::vector<Layer>& layers, Shape in, std::vector<LayerCost>* costs,
                       std::int64_t* peak_activation);

inline Shape propagate_one(const Layer& l, Shape in, std::vector<LayerCost>* costs, std::int64_t* peak) {
  Shape out = in;
  double flops = 0.0;
  switch (l.kind) {
    case LayerKind::Conv2d: {
      if (l.in_channels != in.c)
        throw Error(ErrorCode::InvalidConfig, l.name + ": expects " + std::to_string(l.in_channels) +
                                                  " channels, got " + std::to_string(in.c));
      out = {l.out_channels, conv_out(in.h, l.kernel, l.stride, l.padding), conv_out(in.w, l.kernel, l.stride, l.padding)};
      if (out.h < 1 || out.w < 1) throw Error(ErrorCode::InvalidDimensions, l.name + ": input too small");
      const double macs = static_cast<double>(out.numel()) * (l.in_channels / std::max(1, l.groups)) * l.kernel * l.kernel;
      flops = 2.0 * macs;
      break;
    }
    case LayerKind::Linear: {
      if (l.in_channels != in.numel())
        throw Error(ErrorCode::InvalidConfig, l.name + ": expects " + std::to_string(l.in_channels) +
                                                  " features, got " + std::to_string(in.numel()));
      out = {l.out_channels, 1, 1};
      flops = 2.0 * static_cast<double>(l.in_channels) * l.out_channels;
      break;
    }
    case LayerKind::MaxPool:
      out = {in.c, conv_out(in.h, l.kernel, l.stride, l.padding), conv_out(in.w, l.kernel, l.stride, l.padding)};
      break;
    case LayerKind::GlobalAvgPool:
      out = {in.c, 1, 1};
      break;
    case LayerKind::Flatten:
      out = {static_cast<int>(in.numel()), 1, 1};
      break;
    case LayerKind::MaskRemover:
      flops = static_cast<double>(in.numel());
      break;
    case LayerKind::Residual: {
      std::vector<LayerCost> inner;
      const Shape a = propagate(l.body, in, &inner, peak);
      const Shape b = l.shortcut.empty() ? in : propagate(l.shortcut, in, &inner, peak);
      if (!(a == b)) throw Error(ErrorCode::InvalidConfig, l.name + ": residual branch shapes differ");
      out = a;
      if (costs)
        for (auto& c : inner) costs->push_back(std::move(c));
      break;
    }
    case LayerKind::BatchNorm:
    case LayerKind::ReLU:
    case LayerKind::Dropout:
    case LayerKind::Softmax:
      break;
  }
  if (peak) *peak = std::max(*peak, in.numel() + out.numel());
  if (costs && l.kind != LayerKind::Residual) costs->push_back({l.name, flops, out});
  return out;
}

inline Shape propagate(const std::vector<Layer>& layers, Shape in, std::vector<LayerCost>* costs,
                       std::int64_t* peak_activation) {
  for (const auto& l : layers) in = propagate_one(l, in, costs, peak_activation);
  return in;
}

}  // namespace detail

/// Per-layer forward costs for a square-or-not input of the given size.
inline std::vector<LayerCost> layer_costs(const ModelDescription& model, int height, int width, int channels = 3) {
  std::vector<LayerCost> costs;
  detail::propagate(model.layers, {channels, height, width}, &costs, nullptr);
  return costs;
}

/// Forward-pass GFLOPs (1e9 FLOPs) at the given input size.
inline double count_gflops(const ModelDescription& model, int height, int width, int channels = 3) {
  double total = 0.0;
  for (const auto& c : layer_costs(model, height, width, channels)) total += c.flops;
  return total / 1e9;
}

inline std::int64_t parameter_count(const std::vector<Layer>& layers) {
  std::int64_t n = 0;
  for (const auto& l : layers) {
    switch (l.kind) {
      case LayerKind::Conv2d:
        n += static_cast<std::int64_t>(l.out_channels) * (l.in_channels / std::max(1, l.groups)) * l.kernel * l.kernel;
        break;
      case LayerKind::Linear:
        n += static_cast<std::int64_t>(l.in_channels) * l.out_channels + l.out_channels;
        break;
      case LayerKind::BatchNorm:
        n += 2 * static_cast<std::int64_t>(l.out_channels);
        break;
      case LayerKind::Residual:
        n += parameter_count(l.body) + parameter_count(l.shortcut);
        break;
      default:
        break;
    }
  }
  return n;
}

/// Inference working-set estimate in GB: fp32 parameters plus, per batch
/// element, the largest live input+output activation pair.
inline double estimate_memory_gb(const ModelDescription& model, int height, int width, int batch_size,
                                 int channels = 3) {
  std::int64_t peak = 0;
  detail::propagate(model.layers, {channels, height, width}, nullptr, &peak);
  const double bytes = 4.0 * static_cast<double>(parameter_count(model.layers)) +
                       4.0 * static_cast<double>(batch_size) * static_cast<double>(peak);
  return bytes / 1e9;
}

// ---------------------------------------------------------------------------
// JSON model descriptions, for models profiled from a file.

inline LayerKind parse_layer_kind(const std::string& s) {
  if (s == "conv2d") return LayerKind::Conv2d;
  if (s == "linear") return LayerKind::Linear;
  if (s == "batchnorm") return LayerKind::BatchNorm;
  if (s == "relu") return LayerKind::ReLU;
  if (s == "maxpool") return LayerKind::MaxPool;
  if (s == "global_avgpool") return LayerKind::GlobalAvgPool;
  if (s == "flatten") return LayerKind::Flatten;
  if (s == "dropout") return LayerKind::Dropout;
  if (s == "softmax") return LayerKind::Softmax;
  if (s == "residual") return LayerKind::Residual;
  if (s == "mask_remover") return LayerKind::MaskRemover;
  throw Error(ErrorCode::UnknownLayerType, "unknown layer type '" + s + "'");
}

inline std::vector<Layer> parse_layers(const nlohmann::json& arr) {
  std::vector<Layer> out;
  for (const auto& j : arr) {
    Layer l;
    l.kind = parse_layer_kind(j.at("kind").get<std::string>());
    l.name = j.value("name", j.at("kind").get<std::string>());
    l.in_channels = j.value("in", 0);
    l.out_channels = j.value("out", 0);
    l.kernel = j.value("kernel", 1);
    l.stride = j.value("stride", 1);
    l.padding = j.value("padding", 0);
    l.groups = j.value("groups", 1);
    if (j.contains("body")) l.body = parse_layers(j.at("body"));
    if (j.contains("shortcut")) l.shortcut = parse_layers(j.at("shortcut"));
    out.push_back(std::move(l));
  }
  return out;
}

inline ModelDescription parse_model_description(const nlohmann::json& j) {
  try {
    return {j.value("name", std::string("model")), parse_layers(j.at("layers"))};
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("model description: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Pipeline composition

struct ComponentCost {
  std::string name;
  double gflops = 0.0;
  std::optional<double> memory_gb;
  int input_px = 640;
  int batch_size = 16;
};

inline double mask_remover_gflops(int input_px, int channels = 3) {
  return static_cast<double>(input_px) * input_px * channels / 1e9;
}

/// Sum of component GFLOPs; all components must share one input size.
inline double total_pipeline_gflops(const std::vector<ComponentCost>& costs) {
  double total = 0.0;
  for (const auto& c : costs) {
    if (c.gflops < 0.0) throw Error(ErrorCode::InvalidConfig, c.name + ": negative GFLOPs");
    if (c.input_px != costs.front().input_px)
      throw Error(ErrorCode::InconsistentInputSize, c.name + " measured at " + std::to_string(c.input_px) +
                                                        " px, expected " + std::to_string(costs.front().input_px));
    total += c.gflops;
  }
  return total;
}

/// Maximum of component memory; all components must share one batch size.
/// Components without a memory figure are skipped; nullopt if none has one.
inline std::optional<double> peak_pipeline_memory(const std::vector<ComponentCost>& costs) {
  std::optional<double> peak;
  for (const auto& c : costs) {
    if (c.batch_size != costs.front().batch_size)
      throw Error(ErrorCode::InconsistentBatchSize, c.name + " measured at batch " + std::to_string(c.batch_size) +
                                                        ", expected " + std::to_string(costs.front().batch_size));
    if (!c.memory_gb) continue;
    if (*c.memory_gb < 0.0) throw Error(ErrorCode::InvalidConfig, c.name + ": negative memory");
    peak = peak ? std::max(*peak, *c.memory_gb) : *c.memory_gb;
  }
  return peak;
}

struct ModelCosts {
  std::string model;
  std::vector<ComponentCost> components;
};

inline std::string format_number(double v, int precision = 1) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(precision);
  os << v;
  return os.str();
}

/// Fixed precision, widened for small nonzero values so they do not print
/// as zero.
inline std::string format_table_value(double v, int precision) {
  if (v != 0.0 && std::abs(v) < 0.5 * std::pow(10.0, -precision)) return format_number(v, 6);
  return format_number(v, precision);
}

/// CSV with columns model,gflops,memory_gb,input_px,batch_size. Measurement
/// conditions go into leading '#' comment lines; missing memory is "null".
inline std::string emit_complexity_table(const std::vector<ModelCosts>& models, int precision = 1) {
  std::ostringstream os;
  if (!models.empty() && !models.front().components.empty()) {
    const auto& c = models.front().components.front();
    os << "# input " << c.input_px << "x" << c.input_px << " px, batch " << c.batch_size << '\n';
  }
  os << "# gflops: forward pass, 2 FLOPs per multiply-accumulate; pipeline = sum of components\n";
  os << "# memory_gb: pipeline = max of components\n";
  os << "model,gflops,memory_gb,input_px,batch_size\n";
  for (const auto& m : models) {
    const double g = total_pipeline_gflops(m.components);
    const auto mem = peak_pipeline_memory(m.components);
    const int px = m.components.empty() ? 0 : m.components.front().input_px;
    const int bs = m.components.empty() ? 0 : m.components.front().batch_size;
    os << m.model << ',' << format_table_value(g, precision) << ','
       << (mem ? format_table_value(*mem, precision) : "null")
       << ',' << px << ',' << bs << '\n';
  }
  return os.str();
}

/// Reads externally measured component costs. CSV header must contain
/// model,component,gflops,input_px,batch_size and may contain memory_gb
/// (empty or "null" = unknown). Rows group into models in first-seen order.
inline std::vector<ModelCosts> read_component_costs(std::istream& in, const std::string& source) {
  auto split = [](const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      const auto b = cell.find_first_not_of(" \t\r");
      const auto e = cell.find_last_not_of(" \t\r");
      out.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
    }
    return out;
  };
  std::string line;
  while (std::getline(in, line) && (line.empty() || line[0] == '#')) {
  }
  const auto header = split(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const char* req : {"model", "component", "gflops", "input_px", "batch_size"})
    if (!col.count(req)) throw Error(ErrorCode::MalformedImport, source + ": missing column '" + std::string(req) + "'");
  std::vector<ModelCosts> models;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    const auto cells = split(line);
    const auto where = source + ":" + std::to_string(lineno);
    auto get = [&](const char* name) -> std::string {
      const auto it = col.find(name);
      if (it == col.end() || it->second >= cells.size()) return "";
      return cells[it->second];
    };
    ComponentCost c;
    try {
      c.name = get("component");
      c.gflops = std::stod(get("gflops"));
      c.input_px = std::stoi(get("input_px"));
      c.batch_size = std::stoi(get("batch_size"));
      const auto mem = get("memory_gb");
      if (!mem.empty() && mem != "null") c.memory_gb = std::stod(mem);
    } catch (const std::exception&) {
      throw Error(ErrorCode::MalformedImport, where + ": unparsable cost row");
    }
    const auto model = get("model");
    if (model.empty() || c.name.empty()) throw Error(ErrorCode::MalformedImport, where + ": model and component are required");
    auto it = std::find_if(models.begin(), models.end(), [&](const ModelCosts& m) { return m.model == model; });
    if (it == models.end()) {
      models.push_back({model, {}});
      it = models.end() - 1;
    }
    it->components.push_back(c);
  }
  return models;
}

}  // namespace dishwx::complexity
