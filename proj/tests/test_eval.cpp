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

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "dishwx/eval/metrics.hpp"
#include "dishwx/eval/mmd.hpp"
#include "dishwx/eval/plot.hpp"
#include "dishwx/eval/report.hpp"
#include "dishwx/image_io.hpp"
#include "test_util.hpp"

namespace dishwx::eval {
namespace {

using dishwx::testing::TempDir;

const std::vector<std::string> kBinary = {"snow", "normal"};
const std::vector<std::string> kTernary = {"snow", "wet", "normal"};

PredictionRecord rec(const std::string& t, const std::string& p, int i = 0) {
  return {"s" + std::to_string(i), t, p, {}, "m", 0};
}

std::vector<PredictionRecord> records_with(int correct, int total) {
  std::vector<PredictionRecord> r;
  for (int i = 0; i < total; ++i) r.push_back(rec("snow", i < correct ? "snow" : "normal", i));
  return r;
}

std::vector<PredictionRecord> random_records(Rng& rng, const std::vector<std::string>& vocab, int n) {
  std::vector<PredictionRecord> r;
  for (int i = 0; i < n; ++i)
    r.push_back(rec(vocab[rng.below(vocab.size())], vocab[rng.below(vocab.size())], i));
  return r;
}

FeatureSet gaussian_cloud(Rng& rng, int n, int dim, double mean) {
  FeatureSet s(static_cast<std::size_t>(n), std::vector<float>(static_cast<std::size_t>(dim)));
  for (auto& v : s)
    for (auto& x : v) x = static_cast<float>(mean + rng.normal());
  return s;
}

// Direct double-loop evaluation of the unbiased Gaussian-kernel estimator.
double brute_mmd(const FeatureSet& a, const FeatureSet& b) {
  std::vector<const std::vector<float>*> pool;
  for (const auto& v : a) pool.push_back(&v);
  for (const auto& v : b) pool.push_back(&v);
  auto dist = [](const std::vector<float>& x, const std::vector<float>& y) {
    double s = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) s += (static_cast<double>(x[k]) - y[k]) * (static_cast<double>(x[k]) - y[k]);
    return std::sqrt(s);
  };
  std::vector<double> d;
  for (std::size_t i = 0; i < pool.size(); ++i)
    for (std::size_t j = i + 1; j < pool.size(); ++j) d.push_back(dist(*pool[i], *pool[j]));
  std::sort(d.begin(), d.end());
  const double sigma = d.size() % 2 ? d[d.size() / 2] : 0.5 * (d[d.size() / 2 - 1] + d[d.size() / 2]);
  auto k = [&](const std::vector<float>& x, const std::vector<float>& y) {
    const double r = dist(x, y);
    return std::exp(-r * r / (2 * sigma * sigma));
  };
  double saa = 0, sbb = 0, sab = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a.size(); ++j)
      if (i != j) saa += k(a[i], a[j]);
  for (std::size_t i = 0; i < b.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j)
      if (i != j) sbb += k(b[i], b[j]);
  for (const auto& x : a)
    for (const auto& y : b) sab += k(x, y);
  const double m = static_cast<double>(a.size()), n = static_cast<double>(b.size());
  return std::max(0.0, saa / (m * (m - 1)) + sbb / (n * (n - 1)) - 2 * sab / (m * n));
}

TEST(Confusion, AllCorrect) {
  std::vector<PredictionRecord> r;
  for (int i = 0; i < 10; ++i) r.push_back(rec(kBinary[static_cast<std::size_t>(i % 2)], kBinary[static_cast<std::size_t>(i % 2)], i));
  const auto c = confusion(r, kBinary);
  for (const auto& k : c.counts) {
    EXPECT_EQ(k.fp, 0);
    EXPECT_EQ(k.fn, 0);
  }
  EXPECT_EQ(c.of("snow").tp, 5);
}

TEST(Confusion, AllPredictedOneClass) {
  std::vector<PredictionRecord> r;
  for (int i = 0; i < 10; ++i) r.push_back(rec(kBinary[static_cast<std::size_t>(i % 2)], "snow", i));
  const auto c = confusion(r, kBinary);
  EXPECT_EQ(c.of("snow").tp, 5);
  EXPECT_EQ(c.of("snow").fp, 5);
  EXPECT_EQ(c.of("normal").tp, 0);
  EXPECT_EQ(c.of("normal").fn, 5);
}

TEST(Confusion, Errors) {
  EXPECT_DISHWX_ERROR(confusion({}, kBinary), ErrorCode::EmptyInput);
  EXPECT_DISHWX_ERROR(confusion({rec("hail", "snow")}, kBinary), ErrorCode::UnknownClassLabel);
  EXPECT_DISHWX_ERROR(confusion({rec("snow", "hail")}, kBinary), ErrorCode::UnknownClassLabel);
}

TEST(AveragePrecision, Substitution) {
  ClassCounts c{{"a"}, {{3, 1, 0}}, 4};
  EXPECT_DOUBLE_EQ(average_precision(c, "a"), 0.75);
  c.counts[0] = {4, 0, 2};
  EXPECT_DOUBLE_EQ(average_precision(c, "a"), 1.0);
  c.counts[0] = {0, 5, 0};
  EXPECT_DOUBLE_EQ(average_precision(c, "a"), 0.0);
  c.counts[0] = {0, 0, 3};
  EXPECT_DISHWX_ERROR(average_precision(c, "a"), ErrorCode::UndefinedAP);
}

TEST(MeanAp, Examples) {
  EXPECT_DOUBLE_EQ(mean_ap(ClassCounts{{"a", "b"}, {{1, 0, 0}, {1, 1, 0}}, 3}), 0.75);
  EXPECT_DOUBLE_EQ(mean_ap(ClassCounts{{"a"}, {{3, 1, 0}}, 4}), 0.75);
  // Component precisions 0.8729 and 0.8727 expressed as exact count ratios.
  const ClassCounts table{{"snow", "normal"}, {{8729, 1271, 0}, {8727, 1273, 0}}, 20000};
  EXPECT_NEAR(mean_ap(table), 0.8728, 1e-12);
}

TEST(MeanAp, UndefinedClassExcluded) {
  const ClassCounts c{{"a", "b", "c"}, {{2, 2, 0}, {0, 0, 4}, {3, 0, 0}}, 7};
  std::vector<std::string> excluded;
  EXPECT_DOUBLE_EQ(mean_ap(c, &excluded), 0.75);
  ASSERT_EQ(excluded.size(), 1u);
  EXPECT_EQ(excluded[0], "b");
  EXPECT_DISHWX_ERROR(mean_ap(ClassCounts{{"a"}, {{0, 0, 3}}, 3}), ErrorCode::NoDefinedAP);
}

TEST(MeanApProperty, IdenticalApsAreIdempotent) {
  for (int tp = 1; tp < 20; ++tp) {
    const ClassCounts c{{"a", "b", "c"}, {{tp, 3, 0}, {tp, 3, 1}, {tp, 3, 2}}, 0};
    EXPECT_DOUBLE_EQ(mean_ap(c), average_precision(c, "a"));
  }
}

TEST(Accuracy, TableValues) {
  EXPECT_NEAR(accuracy(records_with(106, 120)), 0.8833, 5e-5);
  EXPECT_NEAR(accuracy(records_with(159, 180)), 0.8833, 5e-5);
  EXPECT_DOUBLE_EQ(accuracy(records_with(0, 7)), 0.0);
  EXPECT_DISHWX_ERROR(accuracy({}), ErrorCode::EmptyInput);
}

TEST(MetricsProperty, AgreeWithBruteForceEnumeration) {
  Rng rng(7);
  for (int t = 0; t < 200; ++t) {
    const auto& vocab = rng.below(2) ? kBinary : kTernary;
    const int n = 1 + static_cast<int>(rng.below(20));
    const auto r = random_records(rng, vocab, n);
    const auto c = confusion(r, vocab);
    std::int64_t tp_sum = 0;
    for (const auto& cls : vocab) {
      std::int64_t tp = 0, fp = 0, fn = 0;
      for (const auto& x : r) {
        tp += x.true_class == cls && x.predicted_class == cls;
        fp += x.true_class != cls && x.predicted_class == cls;
        fn += x.true_class == cls && x.predicted_class != cls;
      }
      EXPECT_EQ(c.of(cls), (Counts{tp, fp, fn}));
      tp_sum += tp;
    }
    EXPECT_DOUBLE_EQ(static_cast<double>(tp_sum) / n, accuracy(r));
    double sum = 0.0;
    int defined = 0;
    for (const auto& cls : vocab) {
      const auto& k = c.of(cls);
      if (k.tp + k.fp > 0) {
        sum += static_cast<double>(k.tp) / static_cast<double>(k.tp + k.fp);
        ++defined;
      }
    }
    EXPECT_NEAR(mean_ap(c), sum / defined, 1e-12);
  }
}

TEST(NormalizeLoss, Examples) {
  EXPECT_DOUBLE_EQ(loss_alpha(80, 3), 1.0);
  EXPECT_DOUBLE_EQ(normalize_loss(0.37, 80, 3), 0.37);
  EXPECT_NEAR(loss_alpha(2, 3), 0.025, 1e-15);
  EXPECT_NEAR(normalize_loss(0.0155, 2, 3), 0.62, 1e-12);
  EXPECT_NEAR(loss_alpha(3, 3), 0.0375, 1e-15);
  EXPECT_DISHWX_ERROR(loss_alpha(0, 3), ErrorCode::InvalidArchitectureParams);
  EXPECT_DISHWX_ERROR(loss_alpha(2, 0), ErrorCode::InvalidArchitectureParams);
}

TEST(NormalizeLossProperty, InvertsAlpha) {
  Rng rng(8);
  for (int t = 0; t < 200; ++t) {
    const int c = 1 + static_cast<int>(rng.below(100)), nl = 1 + static_cast<int>(rng.below(200));
    const double x = rng.uniform(0, 10);
    EXPECT_NEAR(normalize_loss(loss_alpha(c, nl) * x, c, nl), x, 1e-12 * std::max(1.0, x));
  }
}

TEST(Mmd, IdenticalSetsGiveZero) {
  Rng rng(9);
  const auto a = gaussian_cloud(rng, 30, 8, 0.0);
  EXPECT_NEAR(mmd_estimate(a, a), 0.0, 1e-9);
}

TEST(Mmd, Symmetric) {
  Rng rng(10);
  const auto a = gaussian_cloud(rng, 25, 6, 0.0), b = gaussian_cloud(rng, 31, 6, 0.7);
  EXPECT_NEAR(mmd_estimate(a, b), mmd_estimate(b, a), 1e-12);
}

TEST(Mmd, FarCloudsExceedNearClouds) {
  Rng rng(11);
  const auto base = gaussian_cloud(rng, 40, 5, 0.0);
  const auto far = gaussian_cloud(rng, 40, 5, 10.0);
  const auto near = gaussian_cloud(rng, 40, 5, 0.1);
  EXPECT_GT(mmd_estimate(base, far), mmd_estimate(base, near));
}

TEST(Mmd, Errors) {
  EXPECT_DISHWX_ERROR(mmd_estimate({{1, 2}, {3, 4}}, {{1, 2, 3}, {4, 5, 6}}), ErrorCode::DimensionMismatch);
  EXPECT_DISHWX_ERROR(mmd_estimate({{1, 2}}, {{1, 2}, {3, 4}}), ErrorCode::InsufficientSamples);
}

TEST(MmdProperty, NonNegativeAndMatchesDirectLoop) {
  for (std::uint64_t seed = 0; seed < 15; ++seed) {
    Rng rng(seed);
    const int dim = 1 + static_cast<int>(rng.below(6));
    const auto a = gaussian_cloud(rng, 2 + static_cast<int>(rng.below(12)), dim, 0.0);
    const auto b = gaussian_cloud(rng, 2 + static_cast<int>(rng.below(12)), dim, rng.uniform(0, 2));
    const double v = mmd_estimate(a, b);
    EXPECT_GE(v, 0.0);
    EXPECT_NEAR(v, brute_mmd(a, b), 1e-9);
  }
}

TEST(LossImport, ParsesCurves) {
  std::istringstream in(
      "model_id,C,nl,epoch,raw_loss\n"
      "yolov7,2,3,1,0.05\n"
      "yolov7,2,3,2,0.0155\n"
      "# comment\n"
      "faster-rcnn,2,5,1,0.2\n");
  const auto curves = parse_loss_curves(in, "mem");
  ASSERT_EQ(curves.size(), 2u);
  EXPECT_EQ(curves[0].model_id, "yolov7");
  EXPECT_EQ(curves[0].epochs, (std::vector<int>{1, 2}));
  EXPECT_NEAR(curves[0].normalized_loss()[1], 0.62, 1e-12);
  EXPECT_NEAR(curves[1].alpha(), 2.0 / 80 * 3.0 / 5, 1e-15);
}

TEST(LossImport, MalformedInputs) {
  const char* bad[] = {
      "model_id,C,epoch,raw_loss\nyolo,2,1,0.1\n",          // no nl column
      "model_id,C,nl,epoch,raw_loss\nyolo,2,,1,0.1\n",      // empty nl
      "model_id,C,nl,epoch,raw_loss\nyolo,2,3,2,0.1\nyolo,2,3,2,0.1\n",  // epochs not increasing
      "model_id,C,nl,epoch,raw_loss\nyolo,2,3,1,abc\n",     // non-numeric
      "model_id,C,nl,epoch,raw_loss\n",                     // no rows
      "",
  };
  for (const char* text : bad) {
    SCOPED_TRACE(text);
    std::istringstream in(text);
    EXPECT_DISHWX_ERROR(parse_loss_curves(in, "mem"), ErrorCode::MalformedImport);
  }
  EXPECT_DISHWX_ERROR(read_loss_curves("/nonexistent/loss.csv"), ErrorCode::MalformedImport);
}

TEST(Predictions, RoundTripAndMalformed) {
  TempDir dir;
  std::vector<PredictionRecord> r = {{"a", "snow", "snow", {0.9, 0.1}, "proposed", 80},
                                     {"b", "normal", "snow", {0.6, 0.4}, "proposed", 80}};
  write_predictions(r, dir.file("p.jsonl"));
  const auto back = read_predictions(dir.file("p.jsonl"));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].predicted_class, "snow");
  EXPECT_EQ(back[1].probabilities, (std::vector<double>{0.6, 0.4}));
  EXPECT_EQ(back[0].training_images, 80);
  std::ofstream(dir.file("bad.jsonl")) << R"({"sample_id":"x","true_class":"snow"})" << "\n";
  EXPECT_DISHWX_ERROR(read_predictions(dir.file("bad.jsonl")), ErrorCode::MalformedImport);
}

TEST(Comparison, SingleModelOneRow) {
  TempDir dir;
  auto r = report_from_predictions("proposed", 80, records_with(106, 120), kBinary);
  const auto out = emit_comparison({r}, dir.path().string());
  std::ifstream in(out.table);
  std::string header, row, extra;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, "model,training_images,mAP,accuracy");
  EXPECT_EQ(row.rfind("proposed,80,", 0), 0u);
  EXPECT_NE(row.find("0.8833"), std::string::npos);
  EXPECT_FALSE(std::getline(in, extra) && !extra.empty());
  ASSERT_EQ(out.confusion_tables.size(), 1u);
}

TEST(Comparison, ThreeDatasetSizesWithPlots) {
  TempDir dir;
  std::vector<ModelReport> reports;
  for (int n : {40, 64, 80}) {
    auto r = report_from_predictions("proposed", n, records_with(100 + n / 8, 120), kBinary);
    LossCurve c{"proposed", 2, std::nullopt, {1, 2, 3}, {0.5, 0.3, 0.1}, false};
    r.loss = c;
    reports.push_back(r);
  }
  const auto out = emit_comparison(reports, dir.path().string());
  std::ifstream in(out.table);
  std::string line;
  int rows = -1;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  EXPECT_EQ(rows, 3);
  ASSERT_EQ(out.plots.size(), 4u);  // one per model plus the combined chart
  for (const auto& p : out.plots) {
    const Image img = load_image(p);
    EXPECT_GT(img.width(), 100);
  }
}

TEST(Comparison, MissingMetricWrittenAsNull) {
  ModelReport r;
  r.model_id = "baseline";
  r.training_images = 80;
  r.accuracy = 0.5;
  EXPECT_EQ(comparison_csv({r}), "model,training_images,mAP,accuracy\nbaseline,80,null,0.5000\n");
  EXPECT_DISHWX_ERROR(emit_comparison({}, "/tmp/unused"), ErrorCode::EmptyInput);
}

TEST(Plot, AlphaInLegendLabel) {
  const LossCurve c{"yolov7", 2, 3, {1}, {0.0155}, false};
  EXPECT_NE(alpha_label(c).find("a=0.025"), std::string::npos);
}

TEST(Plot, NiceSteps) {
  EXPECT_DOUBLE_EQ(nice_step(1.0, 5), 0.2);
  EXPECT_DOUBLE_EQ(nice_step(50.0, 8), 5.0);
  EXPECT_EQ(tick_label(0.25, 0.05), "0.25");
}

}  // namespace
}  // namespace dishwx::eval
