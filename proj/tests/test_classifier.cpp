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
#include <numeric>

#include "dishwx/classifier/loss.hpp"
#include "dishwx/classifier/model.hpp"
#include "dishwx/classifier/train.hpp"
#include "dishwx/forge/manifest.hpp"
#include "dishwx/image_io.hpp"
#include "test_util.hpp"

namespace dishwx::tl {
namespace {

using dishwx::testing::random_image;
using dishwx::testing::TempDir;

// Small backbone so forward passes stay cheap; the architecture is the same.
const nn::ResNetConfig kTiny{{1, 1, 1, 1}, 8};
constexpr int kTinyInput = 64;

ClassifierModel tiny_model(int classes, std::uint64_t seed = 3) {
  return ClassifierModel::build(classes, BackboneSource::seeded(seed, kTiny), seed, kTinyInput);
}

// Two separable Gaussian clusters in feature space.
void clusters(int n, int dim, std::uint64_t seed, RowMatrix& x, std::vector<int>& y) {
  Rng rng(seed);
  x.resize(n, dim);
  y.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    y[static_cast<std::size_t>(i)] = i % 2;
    for (int d = 0; d < dim; ++d)
      x(i, d) = static_cast<float>(std::abs(rng.normal() * 0.5 + ((d % 2) == (i % 2) ? 1.0 : 0.2)));
  }
}

TEST(CrossEntropy, HandValues) {
  const double half[2] = {0.5, 0.5};
  EXPECT_NEAR(cross_entropy(1, half), std::log(2.0), 1e-12);
  EXPECT_NEAR(cross_entropy(1, half), 0.6931, 1e-4);
  const double third[3] = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  EXPECT_NEAR(cross_entropy(0, third), 1.0986, 1e-4);
  const double sure[2] = {1e-12, 1.0 - 1e-12};
  EXPECT_NEAR(cross_entropy(1, sure), 0.0, 1e-9);
  EXPECT_NEAR(binary_cross_entropy(1, 0.5), std::log(2.0), 1e-12);
  EXPECT_NEAR(binary_cross_entropy(1, 1.0 - 1e-12), 0.0, 1e-9);
  const double onehot[3] = {0, 0, 1};
  const double p[3] = {0.2, 0.3, 0.5};
  EXPECT_NEAR(cross_entropy(onehot, p), -std::log(0.5), 1e-12);
}

TEST(CrossEntropy, InvalidProbability) {
  const double neg[2] = {-0.1, 1.1};
  const double unnorm[2] = {0.5, 0.6};
  EXPECT_DISHWX_ERROR(cross_entropy(0, neg), ErrorCode::InvalidProbability);
  EXPECT_DISHWX_ERROR(cross_entropy(0, unnorm), ErrorCode::InvalidProbability);
  EXPECT_DISHWX_ERROR(binary_cross_entropy(1, 1.5), ErrorCode::InvalidProbability);
}

TEST(CrossEntropyProperty, NonNegativeAndZeroOnlyWhenPerfect) {
  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    const int c = 2 + static_cast<int>(rng.below(4));
    std::vector<double> z(static_cast<std::size_t>(c));
    for (auto& v : z) v = rng.normal() * 3;
    const auto p = softmax(z);
    const int label = static_cast<int>(rng.below(static_cast<std::uint64_t>(c)));
    const double l = cross_entropy(label, p);
    EXPECT_GE(l, 0.0);
    if (p[static_cast<std::size_t>(label)] < 1.0 - 1e-9) {
      EXPECT_GT(l, 0.0);
    }
  }
}

TEST(CrossEntropyProperty, LogitGradientMatchesFiniteDifferences) {
  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> z(3);
    for (auto& v : z) v = rng.normal() * 2;
    const int label = static_cast<int>(rng.below(3));
    std::vector<double> g;
    softmax_cross_entropy(z, label, &g);
    // Independent: loss through softmax + cross_entropy.
    auto loss = [&](std::vector<double> zz) { return cross_entropy(label, softmax(zz)); };
    for (int k = 0; k < 3; ++k) {
      auto a = z, b = z;
      const double h = 1e-5;
      a[static_cast<std::size_t>(k)] += h;
      b[static_cast<std::size_t>(k)] -= h;
      const double fd = (loss(a) - loss(b)) / (2 * h);
      const double an = g[static_cast<std::size_t>(k)];
      EXPECT_LE(std::abs(an - fd), 1e-4 * std::max(std::abs(fd), 1e-3)) << "logit " << k;
    }
  }
}

TEST(SoftmaxProperty, ArgmaxInvariantUnderPositiveRescaling) {
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> z(3);
    for (auto& v : z) v = rng.normal();
    const double s = rng.uniform(0.01, 50);
    std::vector<double> zs = z;
    for (auto& v : zs) v *= s;
    const auto p = softmax(z), q = softmax(zs);
    EXPECT_NEAR(std::accumulate(q.begin(), q.end(), 0.0), 1.0, 1e-9);
    EXPECT_EQ(std::max_element(p.begin(), p.end()) - p.begin(), std::max_element(q.begin(), q.end()) - q.begin());
  }
}

TEST(BuildModel, HeadShapes) {
  const ClassifierModel two = ClassifierModel::build(2, BackboneSource::seeded(1));
  EXPECT_EQ(two.feature_dim(), 2048);
  EXPECT_EQ(two.head().w1.rows(), 128);
  EXPECT_EQ(two.head().w1.cols(), 2048);
  EXPECT_EQ(two.head().w2.rows(), 2);
  EXPECT_EQ(two.head().w2.cols(), 128);
  const ClassifierModel three = ClassifierModel::build(3, BackboneSource::seeded(1));
  EXPECT_EQ(three.head().w2.rows(), 3);
  EXPECT_EQ(three.classes(), 3);
}

TEST(BuildModel, RejectsDegenerateAndMissingWeights) {
  EXPECT_DISHWX_ERROR(ClassifierModel::build(1, BackboneSource::seeded(1)), ErrorCode::InvalidClassCount);
  EXPECT_DISHWX_ERROR(ClassifierModel::build(2, BackboneSource::pretrained("/nonexistent/resnet50.dwt")),
                      ErrorCode::MissingPretrainedWeights);
  EXPECT_DISHWX_ERROR(BackboneSource::resolve("/nonexistent/resnet50.dwt"), ErrorCode::MissingPretrainedWeights);
}

TEST(BuildModel, PretrainedWeightsFileLoads) {
  TempDir dir;
  const auto donor = nn::ResNetBackbone::seeded(9, kTiny);
  nn::TensorStore store;
  donor.export_to(store);
  store.write(dir.file("resnet50.dwt"));
  const auto m = ClassifierModel::build(2, BackboneSource::pretrained(dir.file("resnet50.dwt"), kTiny), 0, kTinyInput);
  EXPECT_FALSE(m.needs_calibration());
  const Image img = random_image(64, 64, 3, 1);
  EXPECT_EQ(m.extract_features(img), donor.features(nn::to_input_tensor(img, kTinyInput)));
}

TEST(BuildModel, EmptyModelNotLoaded) {
  ClassifierModel m;
  EXPECT_DISHWX_ERROR(m.predict(Image(8, 8, 3)), ErrorCode::ModelNotLoaded);
}

TEST(Features, FullWidthDeterministicAndInputSensitive) {
  const ClassifierModel m = ClassifierModel::build(2, BackboneSource::seeded(5));
  const Image img = random_image(300, 300, 3, 2);
  const auto a = m.extract_features(img);
  ASSERT_EQ(a.size(), 2048u);
  for (float v : a) ASSERT_TRUE(std::isfinite(v));
  EXPECT_EQ(m.extract_features(img), a);
  EXPECT_NE(m.extract_features(Image(300, 300, 3, 0)), m.extract_features(Image(300, 300, 3, 255)));
}

TEST(Predict, NormalizedAndDeterministic) {
  const ClassifierModel m = tiny_model(3);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Image img = random_image(80, 60, 3, s);
    const auto p = m.predict(img);
    ASSERT_EQ(p.size(), 3u);
    double sum = 0.0;
    for (double v : p) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-6);
    EXPECT_EQ(m.predict(img), p);
  }
}

TEST(Freeze, ManifestFlagsAndIdempotence) {
  ClassifierModel m = tiny_model(2);
  for (const auto& l : m.manifest().layers) EXPECT_TRUE(l.trainable) << l.name;
  m.freeze_backbone();
  const auto once = m.manifest().to_json();
  m.freeze_backbone();
  EXPECT_EQ(m.manifest().to_json(), once);
  for (const auto& l : m.manifest().layers) EXPECT_EQ(l.trainable, l.name.starts_with("head.")) << l.name;
}

TEST(Freeze, OneStepChangesOnlyHead) {
  ClassifierModel m = tiny_model(2);
  m.freeze_backbone();
  RowMatrix x;
  std::vector<int> y;
  clusters(8, m.feature_dim(), 4, x, y);
  const auto before = m.manifest();
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 8;
  const auto report = train_on_features(m, x, y, x, y, cfg);
  const auto after = m.manifest();
  EXPECT_TRUE(changed_layers(before, after, "backbone.").empty());
  EXPECT_EQ(changed_layers(before, after, "head.").size(), 2u);
  EXPECT_EQ(report.backbone_hash_delta, 0);
  EXPECT_EQ(report.head_layers_changed, 2);
}

TEST(Train, RequiresFrozenBackbone) {
  ClassifierModel m = tiny_model(2);
  RowMatrix x;
  std::vector<int> y;
  clusters(4, m.feature_dim(), 1, x, y);
  EXPECT_DISHWX_ERROR(train_on_features(m, x, y, x, y, TrainConfig{}), ErrorCode::InvalidConfig);
}

TEST(Train, ZeroLearningRateGivesConstantCurve) {
  ClassifierModel m = tiny_model(2);
  m.freeze_backbone();
  RowMatrix x;
  std::vector<int> y;
  clusters(20, m.feature_dim(), 5, x, y);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.weight_decay = 0.0;
  cfg.epochs = 6;
  const auto r = train_on_features(m, x, y, x, y, cfg);
  ASSERT_EQ(r.epochs.size(), 6u);
  for (const auto& e : r.epochs) EXPECT_EQ(e.train_loss, r.epochs.front().train_loss);
  EXPECT_EQ(r.head_layers_changed, 0);
}

TEST(Train, HeadGradientMatchesFiniteDifferences) {
  Head head(12, 6, 3);
  head.initialize(7);
  RowMatrix x;
  std::vector<int> y;
  clusters(5, 12, 6, x, y);
  y[4] = 2;
  const RowMatrix keep = RowMatrix::Ones(5, 6);
  HeadGradients g;
  head_forward_backward(head, x, y, keep, &g);
  auto loss = [&](const Head& h) { return head_forward_backward(h, x, y, keep, nullptr); };
  const float h = 1e-2f;
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 12; j += 3) {
      Head a = head, b = head;
      a.w1(i, j) += h;
      b.w1(i, j) -= h;
      EXPECT_NEAR(g.w1(i, j), (loss(a) - loss(b)) / (2 * h), 2e-3) << i << "," << j;
    }
  for (int c = 0; c < 3; ++c) {
    Head a = head, b = head;
    a.b2(c) += h;
    b.b2(c) -= h;
    EXPECT_NEAR(g.b2(c), (loss(a) - loss(b)) / (2 * h), 2e-3) << c;
  }
}

// Memorization fixture: one snow and one normal image, each duplicated.
class Memorize : public ::testing::Test {
 protected:
  void SetUp() override {
    model = tiny_model(2, 11);
    model.freeze_backbone();
    snow = random_image(64, 64, 3, 21);
    normal = random_image(64, 64, 3, 22);
    std::vector<Image> images;
    for (int i = 0; i < 4; ++i) {
      images.push_back(snow);
      images.push_back(normal);
      y.push_back(0);
      y.push_back(1);
    }
    model.calibrate_backbone(images);
    x = feature_matrix(model, images);
  }
  ClassifierModel model;
  Image snow, normal;
  RowMatrix x;
  std::vector<int> y;
};

TEST_F(Memorize, ReachesFullTrainingAccuracy) {
  TrainConfig cfg;
  cfg.seed = 1;
  const auto r = train_on_features(model, x, y, x, y, cfg);
  EXPECT_EQ(r.epochs.size(), 50u);
  EXPECT_DOUBLE_EQ(r.epochs.back().train_accuracy, 1.0);
  const auto p = model.predict(snow);
  EXPECT_EQ(std::max_element(p.begin(), p.end()) - p.begin(), 0);  // snow is class 0
}

TEST_F(Memorize, CheckpointRoundTripPreservesPredictions) {
  TempDir dir;
  TrainConfig cfg;
  cfg.epochs = 5;
  TrainOptions opt;
  opt.checkpoint_dir = dir.path().string();
  train_on_features(model, x, y, x, y, cfg, opt);
  const auto loaded = load_checkpoint(dir.file("last"));
  EXPECT_EQ(loaded.meta.epoch, 5);
  EXPECT_TRUE(loaded.model.backbone_frozen());
  EXPECT_EQ(loaded.model.manifest().to_json(), model.manifest().to_json());
  EXPECT_EQ(loaded.model.predict(snow), model.predict(snow));
  EXPECT_TRUE(std::filesystem::exists(dir.file("best/weights_manifest.json")));
  EXPECT_TRUE(std::filesystem::exists(dir.file("last/weights.dwt")));
}

TEST_F(Memorize, ResumeContinuesEpochNumberingAndMatchesUninterrupted) {
  TempDir dir, straight;
  TrainConfig cfg;
  cfg.epochs = 3;
  TrainOptions opt;
  opt.checkpoint_dir = dir.path().string();
  ClassifierModel uninterrupted = model;
  train_on_features(model, x, y, x, y, cfg, opt);
  auto ck = load_checkpoint(dir.file("last"));
  const auto r2 = train_on_features(ck.model, x, y, x, y, cfg, opt, &ck.adam, ck.meta.epoch);
  ASSERT_EQ(r2.epochs.size(), 3u);
  EXPECT_EQ(r2.epochs.front().epoch, 4);
  EXPECT_EQ(r2.epochs.back().epoch, 6);

  TrainConfig six = cfg;
  six.epochs = 6;
  train_on_features(uninterrupted, x, y, x, y, six);
  EXPECT_EQ(ck.model.manifest().to_json(), uninterrupted.manifest().to_json());
}

TEST(TrainProperty, SmoothedTrainingLossNonIncreasing) {
  for (int n : {40, 64, 80}) {
    ClassifierModel m = tiny_model(2, static_cast<std::uint64_t>(n));
    m.freeze_backbone();
    RowMatrix x;
    std::vector<int> y;
    clusters(n, m.feature_dim(), static_cast<std::uint64_t>(n), x, y);
    TrainConfig cfg;
    cfg.seed = static_cast<std::uint64_t>(n);
    const auto r = train_on_features(m, x, y, x, y, cfg);
    std::vector<double> smooth;
    for (std::size_t e = 4; e < r.epochs.size(); ++e) {
      double s = 0.0;
      for (std::size_t k = e - 4; k <= e; ++k) s += r.epochs[k].train_loss;
      smooth.push_back(s / 5.0);
    }
    for (std::size_t i = 1; i < smooth.size(); ++i) EXPECT_LE(smooth[i], smooth[i - 1] + 1e-9) << "n=" << n << " i=" << i;
  }
}

TEST(TrainConfigTest, DefaultsAndValidation) {
  TrainConfig c;
  EXPECT_DOUBLE_EQ(c.learning_rate, 2e-4);
  EXPECT_DOUBLE_EQ(c.weight_decay, 5e-4);
  EXPECT_EQ(c.epochs, 50);
  EXPECT_EQ(c.batch_size, 16);
  EXPECT_DOUBLE_EQ(c.dropout, 0.5);
  c.epochs = 0;
  EXPECT_DISHWX_ERROR(c.validate(), ErrorCode::InvalidConfig);
}

// Manifest-driven training over files on disk.
class ManifestTrain : public ::testing::Test {
 protected:
  forge::DatasetManifest write_set(const std::string& name, int n, bool preprocessed) {
    forge::DatasetManifest m;
    m.scenario = forge::Scenario::Initial;
    m.root = dir.path().string();
    for (int i = 0; i < n; ++i) {
      LabeledSample s;
      s.image_path = name + "/" + std::to_string(i) + ".png";
      s.dish_condition = i % 2 ? DishCondition::Normal : DishCondition::Snow;
      s.source_cutout_id = name + std::to_string(i);
      if (preprocessed) s.preprocessed_by = "oracle:test";
      // Bright images for snow, dark for normal.
      Image img = random_image(64, 64, 3, static_cast<std::uint64_t>(i) + (name == "val" ? 100 : 0));
      for (auto& b : img.bytes()) b = static_cast<std::uint8_t>(i % 2 ? b / 4 : 191 + b / 4);
      save_png(img, m.resolve(s.image_path));
      m.samples.push_back(s);
    }
    return m;
  }
  TempDir dir;
};

TEST_F(ManifestTrain, RejectsUnpreprocessedAndEmpty) {
  ClassifierModel m = tiny_model(2);
  m.freeze_backbone();
  const auto raw = write_set("raw", 2, false);
  const auto ok = write_set("ok", 2, true);
  EXPECT_DISHWX_ERROR(train(m, raw, ok, TrainConfig{}), ErrorCode::UnpreprocessedInput);
  EXPECT_DISHWX_ERROR(train(m, forge::DatasetManifest{}, ok, TrainConfig{}), ErrorCode::EmptyManifest);
}

TEST_F(ManifestTrain, ResumeFromDirectory) {
  ClassifierModel m = tiny_model(2);
  m.freeze_backbone();
  const auto tr = write_set("train", 8, true);
  const auto va = write_set("val", 4, true);
  TrainConfig cfg;
  cfg.epochs = 4;
  TrainOptions opt;
  opt.checkpoint_dir = dir.file("ck");
  const auto first = train(m, tr, va, cfg, opt);
  EXPECT_EQ(first.epochs.size(), 4u);
  EXPECT_EQ(first.backbone_hash_delta, 0);
  ClassifierModel fresh;
  opt.resume = true;
  const auto second = train(fresh, tr, va, cfg, opt);
  ASSERT_EQ(second.epochs.size(), 4u);
  EXPECT_EQ(second.epochs.front().epoch, 5);
  EXPECT_GE(second.best_epoch, first.best_epoch);
  EXPECT_DOUBLE_EQ(second.epochs.back().train_accuracy, 1.0);
}

}  // namespace
}  // namespace dishwx::tl
