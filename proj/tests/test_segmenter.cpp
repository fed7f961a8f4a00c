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

#include <algorithm>
#include <cmath>
#include <fstream>

#include "dishwx/image_io.hpp"
#include "dishwx/segmenter/annotation.hpp"
#include "dishwx/segmenter/external_backend.hpp"
#include "dishwx/segmenter/oracle_backend.hpp"
#include "dishwx/segmenter/pixel_backend.hpp"
#include "dishwx/segmenter/segmentation.hpp"
#include "test_util.hpp"

namespace dishwx::seg {
namespace {

using dishwx::testing::random_image;
using dishwx::testing::random_mask;
using dishwx::testing::TempDir;

BinaryMask rect_mask(int w, int h, int x0, int y0, int rw, int rh) {
  BinaryMask m(w, h);
  for (int y = y0; y < y0 + rh; ++y)
    for (int x = x0; x < x0 + rw; ++x) m.set(x, y, true);
  return m;
}

// Writes image + annotation pair; objects are rectangles given as {x, y, w, h, score}.
std::string write_fixture(const TempDir& dir, const std::string& stem, const Image& img,
                          const std::vector<std::array<double, 5>>& rects) {
  save_png(img, dir.file(stem + ".png"));
  Annotation a{stem + ".png", img.width(), img.height(), {}};
  for (std::size_t i = 0; i < rects.size(); ++i) {
    const auto& r = rects[i];
    const std::string mname = stem + "_mask" + std::to_string(i) + ".png";
    save_mask(rect_mask(img.width(), img.height(), static_cast<int>(r[0]), static_cast<int>(r[1]),
                        static_cast<int>(r[2]), static_cast<int>(r[3])),
              dir.file(mname));
    AnnotatedObject o;
    o.mask_path = mname;
    o.score = r[4];
    a.objects.push_back(o);
  }
  const std::string path = dir.file(stem + ".json");
  write_annotation(a, path);
  return path;
}

TEST(CompositeLoss, DefaultWeightsOnUnitLosses) {
  EXPECT_DOUBLE_EQ(composite_loss({1, 1, 1}), 8.625);
  EXPECT_DOUBLE_EQ(composite_loss({0, 0, 0}), 0.0);
  EXPECT_DOUBLE_EQ(composite_loss({1, 1, 1}, LossWeights{1, 1, 1}), 3.0);
}

TEST(CompositeLoss, LinearInEachComponent) {
  Rng rng(11);
  for (int t = 0; t < 50; ++t) {
    const LossComponents l{rng.uniform(0, 5), rng.uniform(0, 5), rng.uniform(0, 5)};
    const double base = composite_loss(l);
    const double d = rng.uniform(0.1, 2.0);
    EXPECT_NEAR(composite_loss({l.cls + d, l.box, l.mask}) - base, 1.0 * d, 1e-12);
    EXPECT_NEAR(composite_loss({l.cls, l.box + d, l.mask}) - base, 1.5 * d, 1e-12);
    EXPECT_NEAR(composite_loss({l.cls, l.box, l.mask + d}) - base, 6.125 * d, 1e-12);
  }
}

TEST(SegmenterConfigTest, DefaultsAndValidation) {
  SegmenterConfig c;
  EXPECT_DOUBLE_EQ(c.weights.cls, 1.0);
  EXPECT_DOUBLE_EQ(c.weights.box, 1.5);
  EXPECT_DOUBLE_EQ(c.weights.mask, 6.125);
  EXPECT_DOUBLE_EQ(c.learning_rate, 2e-3);
  EXPECT_DOUBLE_EQ(c.confidence_threshold, 0.5);
  c.learning_rate = 0.0;
  EXPECT_DISHWX_ERROR(c.validate(), ErrorCode::InvalidConfig);
}

TEST(SelectObject, HighestConfidenceWins) {
  SegmentationResult r;
  r.detections.push_back({rect_mask(30, 30, 0, 0, 5, 5), 0.9});
  r.detections.push_back({rect_mask(30, 30, 0, 0, 20, 20), 0.4});
  EXPECT_EQ(select_object_of_interest(r), r.detections[0].mask);
}

TEST(SelectObject, SingleDetection) {
  SegmentationResult r;
  r.detections.push_back({rect_mask(10, 10, 2, 2, 3, 3), 0.6});
  EXPECT_EQ(select_object_of_interest(r), r.detections[0].mask);
}

TEST(SelectObject, TieBrokenByArea) {
  SegmentationResult r;
  r.detections.push_back({rect_mask(50, 50, 0, 0, 12, 10), 0.7});  // 120 px
  r.detections.push_back({rect_mask(50, 50, 5, 5, 20, 20), 0.7});  // 400 px
  EXPECT_EQ(select_object_of_interest(r).popcount(), 400u);
}

TEST(SelectObject, EmptyResultSignalsSkip) {
  EXPECT_DISHWX_ERROR(select_object_of_interest(SegmentationResult{}), ErrorCode::NoDetection);
}

TEST(SelectObjectProperty, PermutationInvariant) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    SegmentationResult r;
    const int n = 1 + static_cast<int>(rng.below(6));
    for (int i = 0; i < n; ++i) {
      // Coarse confidences and sizes so ties are common.
      const double conf = 0.5 + 0.1 * static_cast<double>(rng.below(3));
      const int side = 2 + static_cast<int>(rng.below(3));
      r.detections.push_back({rect_mask(12, 12, static_cast<int>(rng.below(6)), static_cast<int>(rng.below(6)), side, side), conf});
    }
    const BinaryMask want = select_object_of_interest(r);
    for (int p = 0; p < 10; ++p) {
      rng.shuffle(r.detections.begin(), r.detections.end());
      ASSERT_EQ(select_object_of_interest(r), want) << "seed " << seed;
    }
  }
}

TEST(RemoveBackground, AllOnesIsIdentity) {
  const Image img = random_image(20, 15, 3, 1);
  EXPECT_EQ(remove_background(img, BinaryMask(20, 15, true)), img);
}

TEST(RemoveBackground, AllZerosBlackFill) {
  const Image out = remove_background(random_image(20, 15, 3, 2), BinaryMask(20, 15, false), FillPolicy::black());
  for (auto b : out.bytes()) EXPECT_EQ(b, 0);
}

TEST(RemoveBackground, DefaultFillRgbaIsTransparent) {
  const Image out = remove_background(random_image(8, 8, 4, 3), BinaryMask(8, 8, false));
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) EXPECT_EQ(out.at(x, y, 3), 0);
}

TEST(RemoveBackground, CheckerboardMatchesPerPixelLoop) {
  const Image img = random_image(33, 21, 3, 4);
  BinaryMask m(33, 21);
  for (int y = 0; y < 21; ++y)
    for (int x = 0; x < 33; ++x) m.set(x, y, (x + y) % 2 == 0);
  const FillPolicy fill{10, 20, 30, 255};
  const Image out = remove_background(img, m, fill);
  for (int y = 0; y < 21; ++y)
    for (int x = 0; x < 33; ++x) {
      const std::uint8_t want[3] = {fill.r, fill.g, fill.b};
      for (int k = 0; k < 3; ++k) ASSERT_EQ(out.at(x, y, k), m.get(x, y) ? img.at(x, y, k) : want[k]);
    }
}

TEST(RemoveBackground, DimensionMismatch) {
  EXPECT_DISHWX_ERROR(remove_background(Image(10, 10, 3), BinaryMask(10, 9)), ErrorCode::DimensionMismatch);
}

TEST(RemoveBackgroundProperty, PreservesExactlyTheMaskedPixels) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const int w = 1 + static_cast<int>(rng.below(40)), h = 1 + static_cast<int>(rng.below(40));
    const int ch = rng.below(2) ? 4 : 3;
    const Image img = random_image(w, h, ch, seed + 50);
    const BinaryMask m = random_mask(w, h, rng.uniform(), seed + 90);
    // Fill with a value no random pixel is likely to match in every channel.
    const Image out = remove_background(img, m, FillPolicy{1, 2, 3, 4});
    std::size_t preserved = 0;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const bool same = std::equal(img.pixel(x, y), img.pixel(x, y) + ch, out.pixel(x, y));
        if (m.get(x, y)) {
          ASSERT_TRUE(same);
          ++preserved;
        } else {
          for (int k = 0; k < ch; ++k) ASSERT_EQ(out.at(x, y, k), k + 1);
        }
      }
    EXPECT_EQ(preserved, m.popcount());
  }
}

TEST(ExtractCutout, TenByTenObject) {
  const Image img = random_image(100, 100, 3, 5);
  const Image c = extract_cutout(img, rect_mask(100, 100, 37, 52, 10, 10));
  ASSERT_EQ(c.width(), 10);
  ASSERT_EQ(c.height(), 10);
  ASSERT_EQ(c.channels(), 4);
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 10; ++x) {
      EXPECT_EQ(c.at(x, y, 3), 255);
      for (int k = 0; k < 3; ++k) EXPECT_EQ(c.at(x, y, k), img.at(37 + x, 52 + y, k));
    }
}

TEST(ExtractCutout, FullFrame) {
  const Image img = random_image(16, 12, 3, 6);
  const Image c = extract_cutout(img, BinaryMask(16, 12, true));
  EXPECT_EQ(to_rgb(c), img);
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 16; ++x) EXPECT_EQ(c.at(x, y, 3), 255);
}

TEST(ExtractCutout, AlphaFollowsMaskInsideBox) {
  const Image img = random_image(30, 30, 3, 7);
  BinaryMask m(30, 30);
  m.set(4, 5, true);
  m.set(10, 9, true);
  const Image c = extract_cutout(img, m);
  ASSERT_EQ(c.width(), 7);
  ASSERT_EQ(c.height(), 5);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 7; ++x) EXPECT_EQ(c.at(x, y, 3), m.get(4 + x, 5 + y) ? 255 : 0);
}

TEST(ExtractCutout, EmptyMask) {
  EXPECT_DISHWX_ERROR(extract_cutout(Image(5, 5, 3), BinaryMask(5, 5)), ErrorCode::EmptyMask);
}

TEST(Annotation, PolygonRasterizationAndRoundTrip) {
  TempDir dir;
  Annotation a{"x.png", 20, 20, {}};
  AnnotatedObject o;
  o.polygon = {{2, 3}, {12, 3}, {12, 9}, {2, 9}};
  a.objects.push_back(o);
  write_annotation(a, dir.file("x.json"));
  const Annotation b = read_annotation(dir.file("x.json"));
  const auto masks = annotation_masks(b, dir.file("x.json"));
  ASSERT_EQ(masks.size(), 1u);
  EXPECT_EQ(masks[0], rect_mask(20, 20, 2, 3, 10, 6));
}

TEST(Annotation, MissingAndMalformed) {
  TempDir dir;
  EXPECT_DISHWX_ERROR(read_annotation(dir.file("none.json")), ErrorCode::AnnotationMissing);
  std::ofstream(dir.file("bad.json")) << R"({"image": "a.png", "width": 4})";
  EXPECT_DISHWX_ERROR(read_annotation(dir.file("bad.json")), ErrorCode::MalformedAnnotation);
}

TEST(OracleBackendTest, ReturnsAnnotatedMask) {
  TempDir dir;
  const Image img = random_image(40, 30, 3, 8);
  const std::string ann = write_fixture(dir, "one", img, {{5, 6, 10, 8, 1.0}});
  OracleBackend oracle;
  const Checkpoint ck = oracle.finetune({{dir.file("one.png"), ann}}, SegmenterConfig{}, dir.file("ck"), {});
  OracleBackend fresh;
  fresh.load(ck);
  const auto r = fresh.segment(img);
  ASSERT_EQ(r.detections.size(), 1u);
  EXPECT_EQ(r.detections[0].mask, rect_mask(40, 30, 5, 6, 10, 8));
  EXPECT_DOUBLE_EQ(r.detections[0].confidence, 1.0);
}

TEST(OracleBackendTest, NoDishGivesNoDetections) {
  TempDir dir;
  const Image img = random_image(20, 20, 3, 9);
  write_fixture(dir, "empty", img, {});
  OracleBackend oracle;
  oracle.load({"oracle", dir.path().string(), ""});
  EXPECT_TRUE(oracle.segment(img).empty());
}

TEST(OracleBackendTest, TwoDishesDescendingConfidence) {
  TempDir dir;
  const Image img = random_image(50, 50, 3, 10);
  write_fixture(dir, "two", img, {{1, 1, 10, 10, 0.6}, {20, 20, 15, 15, 0.95}});
  OracleBackend oracle;
  oracle.load({"oracle", dir.path().string(), ""});
  const auto r = oracle.segment(img);
  ASSERT_EQ(r.detections.size(), 2u);
  EXPECT_GT(r.detections[0].confidence, r.detections[1].confidence);
  EXPECT_EQ(r.detections[0].mask.popcount(), 225u);
}

TEST(OracleBackendTest, PipelineEqualsGroundTruthMasking) {
  TempDir dir;
  const Image img = random_image(60, 40, 3, 12);
  write_fixture(dir, "p", img, {{10, 5, 30, 20, 1.0}});
  OracleBackend oracle;
  oracle.load({"oracle", dir.path().string(), ""});
  const Image out = remove_background(img, select_object_of_interest(oracle.segment(img)));
  EXPECT_EQ(out, remove_background(img, rect_mask(60, 40, 10, 5, 30, 20)));
}

TEST(OracleBackendTest, Errors) {
  OracleBackend oracle;
  EXPECT_DISHWX_ERROR(oracle.segment(Image(4, 4, 3)), ErrorCode::CheckpointMissing);
  EXPECT_DISHWX_ERROR(oracle.load({"oracle", "/nonexistent/ck.json", ""}), ErrorCode::CheckpointMissing);
  TempDir dir;
  EXPECT_DISHWX_ERROR(oracle.finetune({}, SegmenterConfig{}, dir.file("o"), {}), ErrorCode::EmptyDataset);
}

TEST(PixelLoss, GradientMatchesFiniteDifferences) {
  const Image img = random_image(14, 11, 3, 13);
  const auto f = detail::pixel_features(img);
  const BinaryMask target = rect_mask(14, 11, 3, 2, 6, 5);
  Rng rng(14);
  PixelWeights w{};
  for (auto& v : w) v = rng.uniform(-0.3, 0.3);
  const LossWeights lw;
  const auto r = pixel_loss(w, f, 14, 11, target, lw);
  EXPECT_NEAR(r.total, composite_loss(r.components, lw), 1e-12);
  const double h = 1e-6;
  for (int k = 0; k < kPixelFeatures; ++k) {
    PixelWeights a = w, b = w;
    a[k] += h;
    b[k] -= h;
    const double fd = (pixel_loss(a, f, 14, 11, target, lw).total - pixel_loss(b, f, 14, 11, target, lw).total) / (2 * h);
    EXPECT_NEAR(r.gradient[k], fd, 1e-4 * std::max(1.0, std::abs(fd))) << "weight " << k;
  }
}

TEST(PixelLogitBackendTest, TraceTotalsUseConfiguredWeights) {
  TempDir dir;
  const Image img = random_image(24, 24, 3, 15);
  const std::string ann = write_fixture(dir, "t", img, {{4, 4, 12, 12, 1.0}});
  PixelLogitBackend backend;
  SegmenterConfig cfg;
  cfg.iterations = 5;
  cfg.weights = {2.0, 0.5, 3.0};
  int calls = 0;
  backend.finetune({{dir.file("t.png"), ann}}, cfg, dir.file("ck"), [&](const TrainingTrace& t, const LossWeights& w) {
    ++calls;
    EXPECT_DOUBLE_EQ(t.total, w.cls * t.components.cls + w.box * t.components.box + w.mask * t.components.mask);
    EXPECT_DOUBLE_EQ(w.cls, 2.0);
  });
  EXPECT_EQ(calls, 5);
  EXPECT_TRUE(backend.loaded());
}

TEST(ExternalBackendTest, RoundTripThroughFakeCommands) {
  TempDir dir;
  const Image img = random_image(20, 16, 3, 16);
  const BinaryMask gt = rect_mask(20, 16, 3, 4, 5, 6);
  save_mask(gt, dir.file("gt.png"));
  const std::string ann = write_fixture(dir, "e", img, {{3, 4, 5, 6, 1.0}});
  const std::string train =
      "echo blob > {out_dir}/checkpoint.bin && echo '{\"iteration\":1,\"cls\":1,\"box\":1,\"mask\":1}' > {out_dir}/losses.jsonl";
  const std::string infer = "cp " + dir.file("gt.png") +
                            " {work}/m0.png && echo '[{\"mask\":\"m0.png\",\"score\":0.8}]' > {work}/detections.json";
  ExternalProcessBackend backend(infer, train, dir.file("work"));
  std::vector<double> totals;
  const Checkpoint ck = backend.finetune({{dir.file("e.png"), ann}}, SegmenterConfig{}, dir.file("out"),
                                         [&](const TrainingTrace& t, const LossWeights&) { totals.push_back(t.total); });
  ASSERT_EQ(totals.size(), 1u);
  EXPECT_DOUBLE_EQ(totals[0], 8.625);
  backend.load(ck);
  const auto r = backend.segment(img);
  ASSERT_EQ(r.detections.size(), 1u);
  EXPECT_EQ(r.detections[0].mask, gt);
  EXPECT_DOUBLE_EQ(r.detections[0].confidence, 0.8);
}

TEST(ExternalBackendTest, InferenceOnlyIsNotTrainable) {
  TempDir dir;
  ExternalProcessBackend backend("true", "", dir.file("work"));
  EXPECT_FALSE(backend.trainable());
  EXPECT_DISHWX_ERROR(backend.finetune({{"a.png", "a.json"}}, SegmenterConfig{}, dir.file("o"), {}),
                      ErrorCode::BackendNotTrainable);
}

TEST(ExternalBackendTest, FailingCommand) {
  TempDir dir;
  save_png(Image(4, 4, 3), dir.file("x.png"));
  ExternalProcessBackend backend("false", "", dir.file("work"));
  backend.load({"external", dir.file("x.png"), ""});
  EXPECT_DISHWX_ERROR(backend.segment(Image(4, 4, 3)), ErrorCode::BackendFailure);
}

}  // namespace
}  // namespace dishwx::seg
