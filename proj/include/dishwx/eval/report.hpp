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

// Comparison tables and loss-curve plots across models.
//
// Loss-curve import format: CSV with a header naming at least the columns
//   model_id,C,nl,epoch,raw_loss
// (any order, one row per epoch, several models per file allowed). Every row
// needs a value in every column; epochs must strictly increase per model.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dishwx/error.hpp"
#include "dishwx/eval/metrics.hpp"
#include "dishwx/eval/plot.hpp"
#include "dishwx/image_io.hpp"

namespace dishwx::eval {

struct LossCurve {
  std::string model_id;
  int classes = 0;
  std::optional<int> layers;  // nl; required for imported external models
  std::vector<int> epochs;
  std::vector<double> raw_loss;
  bool normalized = false;

  /// Scale factor used when plotting; 1 when no layer count is known.
  double alpha() const { return layers ? loss_alpha(classes, *layers) : 1.0; }

  std::vector<double> normalized_loss() const {
    const double a = alpha();
    std::vector<double> out;
    for (const double v : raw_loss) out.push_back(normalized || !layers ? v : v / a);
    return out;
  }
};

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

template <typename T>
T parse_number(const std::string& s, const std::string& where, const std::string& col) {
  try {
    std::size_t used = 0;
    T v;
    if constexpr (std::is_integral_v<T>)
      v = static_cast<T>(std::stoll(s, &used));
    else
      v = static_cast<T>(std::stod(s, &used));
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::MalformedImport, where + ": column '" + col + "' has invalid value '" + s + "'");
  }
}

}  // namespace detail

inline std::vector<LossCurve> parse_loss_curves(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::MalformedImport, source + ": empty loss-curve file");
  const auto header = detail::split_csv(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const char* req : {"model_id", "C", "nl", "epoch", "raw_loss"})
    if (!col.count(req)) throw Error(ErrorCode::MalformedImport, source + ": missing column '" + std::string(req) + "'");

  std::vector<LossCurve> curves;
  std::map<std::string, std::size_t> index;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    const auto cells = detail::split_csv(line);
    const auto where = source + ":" + std::to_string(lineno);
    auto cell = [&](const char* name) -> const std::string& {
      const auto i = col.at(name);
      if (i >= cells.size() || cells[i].empty())
        throw Error(ErrorCode::MalformedImport, where + ": missing value for '" + std::string(name) + "'");
      return cells[i];
    };
    const auto& id = cell("model_id");
    const int c = detail::parse_number<int>(cell("C"), where, "C");
    const int nl = detail::parse_number<int>(cell("nl"), where, "nl");
    const int epoch = detail::parse_number<int>(cell("epoch"), where, "epoch");
    const double loss = detail::parse_number<double>(cell("raw_loss"), where, "raw_loss");
    if (c < 1 || nl < 1) throw Error(ErrorCode::MalformedImport, where + ": C and nl must be >= 1");
    if (!std::isfinite(loss) || loss < 0) throw Error(ErrorCode::MalformedImport, where + ": raw_loss must be finite and >= 0");
    auto [it, fresh] = index.try_emplace(id, curves.size());
    if (fresh) {
      curves.push_back({});
      curves.back().model_id = id;
      curves.back().classes = c;
      curves.back().layers = nl;
    }
    auto& cv = curves[it->second];
    if (cv.classes != c || cv.layers != nl)
      throw Error(ErrorCode::MalformedImport, where + ": C/nl change within model '" + id + "'");
    if (!cv.epochs.empty() && epoch <= cv.epochs.back())
      throw Error(ErrorCode::MalformedImport, where + ": epochs must strictly increase");
    cv.epochs.push_back(epoch);
    cv.raw_loss.push_back(loss);
  }
  if (curves.empty()) throw Error(ErrorCode::MalformedImport, source + ": no loss rows");
  return curves;
}

inline std::vector<LossCurve> read_loss_curves(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MalformedImport, "cannot open loss-curve file " + path);
  return parse_loss_curves(in, path);
}

struct ModelReport {
  std::string model_id;
  int training_images = 0;
  std::optional<double> map;
  std::optional<double> accuracy;
  std::vector<std::string> classes;
  std::vector<std::vector<std::int64_t>> confusion;  // rows true, columns predicted
  std::optional<LossCurve> loss;
};

/// Builds a report from prediction records.
inline ModelReport report_from_predictions(const std::string& model_id, int training_images,
                                           const std::vector<PredictionRecord>& records,
                                           const std::vector<std::string>& vocab,
                                           std::vector<std::string>* undefined_ap = nullptr) {
  ModelReport r;
  r.model_id = model_id;
  r.training_images = training_images;
  r.classes = vocab;
  const auto counts = confusion(records, vocab);
  r.map = mean_ap(counts, undefined_ap);
  r.accuracy = accuracy(records);
  r.confusion = confusion_matrix(records, vocab);
  return r;
}

inline std::string format_metric(const std::optional<double>& v) {
  if (!v) return "null";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", *v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (const char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

inline std::string comparison_csv(const std::vector<ModelReport>& reports) {
  std::ostringstream out;
  out << "model,training_images,mAP,accuracy\n";
  for (const auto& r : reports)
    out << csv_field(r.model_id) << ',' << r.training_images << ',' << format_metric(r.map) << ','
        << format_metric(r.accuracy) << '\n';
  return out.str();
}

inline std::string confusion_csv(const ModelReport& r) {
  std::ostringstream out;
  out << "true\\predicted";
  for (const auto& c : r.classes) out << ',' << csv_field(c);
  out << '\n';
  for (std::size_t i = 0; i < r.confusion.size(); ++i) {
    out << csv_field(r.classes[i]);
    for (const auto v : r.confusion[i]) out << ',' << v;
    out << '\n';
  }
  return out.str();
}

inline std::string file_stem_for(const std::string& id) {
  std::string s;
  for (const char c : id) s += std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' ? c : '_';
  return s.empty() ? "model" : s;
}

inline std::string alpha_label(const LossCurve& c) {
  char buf[96];
  if (c.layers)
    std::snprintf(buf, sizeof buf, "%s (a=%.4g, C=%d, nl=%d)", c.model_id.c_str(), c.alpha(), c.classes, *c.layers);
  else
    std::snprintf(buf, sizeof buf, "%s (a=1, raw)", c.model_id.c_str());
  return buf;
}

struct ComparisonOutputs {
  std::string table;
  std::vector<std::string> confusion_tables;
  std::vector<std::string> plots;
};

/// Writes comparison.csv, confusion_<model>.csv per model with a confusion
/// matrix, loss_<model>.png per model with a loss curve and a combined
/// loss_curves.png of normalized losses with per-model alpha in the legend.
inline ComparisonOutputs emit_comparison(const std::vector<ModelReport>& reports, const std::string& out_dir) {
  if (reports.empty()) throw Error(ErrorCode::EmptyInput, "no model reports to compare");
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  ComparisonOutputs out;
  out.table = (fs::path(out_dir) / "comparison.csv").string();
  std::ofstream(out.table) << comparison_csv(reports);

  std::vector<Series> all;
  for (const auto& r : reports) {
    const auto stem = file_stem_for(r.model_id + (reports.size() > 1 ? "_" + std::to_string(r.training_images) : ""));
    if (!r.confusion.empty()) {
      const auto p = (fs::path(out_dir) / ("confusion_" + stem + ".csv")).string();
      std::ofstream(p) << confusion_csv(r);
      out.confusion_tables.push_back(p);
    }
    if (r.loss && !r.loss->epochs.empty()) {
      Series s;
      s.label = alpha_label(*r.loss);
      s.x.assign(r.loss->epochs.begin(), r.loss->epochs.end());
      s.y = r.loss->normalized_loss();
      const auto p = (fs::path(out_dir) / ("loss_" + stem + ".png")).string();
      save_png(line_chart({s}, "Loss: " + r.model_id, "epoch", "normalized loss"), p);
      out.plots.push_back(p);
      all.push_back(std::move(s));
    }
  }
  if (!all.empty()) {
    const auto p = (fs::path(out_dir) / "loss_curves.png").string();
    save_png(line_chart(all, "Normalized classification loss", "epoch", "loss / a"), p);
    out.plots.push_back(p);
  }
  return out;
}

}  // namespace dishwx::eval
