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

#include <fstream>
#include <set>
#include <sstream>

#include "dishwx/forge/forge.hpp"
#include "dishwx/forge/manifest.hpp"
#include "dishwx/image_io.hpp"
#include "test_util.hpp"

namespace dishwx::forge {
namespace {

using dishwx::testing::random_image;
using dishwx::testing::TempDir;

Cutout disc_cutout(const std::string& id, DishCondition cond, int side, std::uint64_t seed) {
  Image img = random_image(side, side, 4, seed);
  const double r = side / 2.0;
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      const double dx = x + 0.5 - r, dy = y + 0.5 - r;
      img.at(x, y, 3) = dx * dx + dy * dy <= r * r ? 255 : 0;
    }
  return {id, cond, img};
}

CutoutPool make_cutouts(int per_condition) {
  CutoutPool pool;
  std::uint64_t seed = 1;
  for (auto c : {DishCondition::Snow, DishCondition::Wet, DishCondition::Normal})
    for (int i = 0; i < per_condition; ++i)
      pool.push_back(disc_cutout(std::string(to_string(c)) + "/" + std::to_string(i), c, 40, seed++));
  return pool;
}

BackgroundPool make_backgrounds(int per_condition) {
  BackgroundPool pool;
  std::uint64_t seed = 100;
  for (auto b : kAllBackgrounds)
    for (int i = 0; i < per_condition; ++i)
      pool.push_back({std::string(to_string(b)) + "/" + std::to_string(i), b, random_image(64, 48, 3, seed++)});
  return pool;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

TEST(ScenarioSpecTest, Combinatorics) {
  EXPECT_EQ((ScenarioSpec{Scenario::Initial, 10, 0}.combinations()), 8);
  EXPECT_EQ((ScenarioSpec{Scenario::Extended, 10, 0}.combinations()), 12);
  EXPECT_EQ((ScenarioSpec{Scenario::Initial, 5, 0}.dataset_size()), 40);
  EXPECT_EQ((ScenarioSpec{Scenario::Initial, 10, 0}.dataset_size()), 80);
  EXPECT_EQ((ScenarioSpec{Scenario::Extended, 15, 0}.dataset_size()), 180);
}

TEST(SplitPool, TenCutoutsEightTwo) {
  CutoutPool pool;
  for (int i = 0; i < 10; ++i) pool.push_back(disc_cutout("n" + std::to_string(i), DishCondition::Normal, 8, static_cast<std::uint64_t>(i)));
  const auto [train, val] = split_cutout_pool(pool, 0.8, 3);
  EXPECT_EQ(train.size(), 8u);
  EXPECT_EQ(val.size(), 2u);
  std::set<std::string> ids;
  for (const auto& c : train) ids.insert(c.id);
  for (const auto& c : val) EXPECT_FALSE(ids.count(c.id)) << c.id;
}

TEST(SplitPool, MinimalOneOnEachSide) {
  const auto [train, val] = split_cutout_pool(make_cutouts(2), 0.5, 7);
  for (auto cond : {DishCondition::Snow, DishCondition::Wet, DishCondition::Normal}) {
    const auto count = [cond](const CutoutPool& p) {
      return std::count_if(p.begin(), p.end(), [cond](const Cutout& c) { return c.condition == cond; });
    };
    EXPECT_EQ(count(train), 1);
    EXPECT_EQ(count(val), 1);
  }
}

TEST(SplitPool, DeterministicForSeed) {
  const auto pool = make_cutouts(6);
  const auto a = split_cutout_pool(pool, 0.7, 42);
  const auto b = split_cutout_pool(pool, 0.7, 42);
  ASSERT_EQ(a.first.size(), b.first.size());
  for (std::size_t i = 0; i < a.first.size(); ++i) EXPECT_EQ(a.first[i].id, b.first[i].id);
}

TEST(SplitPool, InsufficientCutouts) {
  CutoutPool pool = make_cutouts(2);
  pool.pop_back();  // one normal cutout left
  EXPECT_DISHWX_ERROR(split_cutout_pool(pool, 0.5, 1), ErrorCode::InsufficientCutouts);
}

TEST(Compose, TransparentCutoutLeavesResizedBackground) {
  const Image bg = random_image(400, 300, 3, 1);
  Image cut(50, 50, 4, 200);
  for (int y = 0; y < 50; ++y)
    for (int x = 0; x < 50; ++x) cut.at(x, y, 3) = 0;
  Rng rng(5);
  const Composite c = compose(cut, bg, CompositionParams{}, rng);
  EXPECT_EQ(c.image, crop_and_resize(bg, 300, 300));
  EXPECT_EQ(c.mask.popcount(), 0u);
}

TEST(Compose, OpaqueRectangleMatchesBruteForce) {
  const Image bg = random_image(300, 300, 3, 2);
  const Image cut = random_image(37, 23, 4, 3);
  Image opaque = cut;
  for (int y = 0; y < 23; ++y)
    for (int x = 0; x < 37; ++x) opaque.at(x, y, 3) = 255;
  const int px = 101, py = 57;
  const Composite c = compose_at(opaque, bg, Placement{0.0, 1.0, px, py});
  for (int y = 0; y < 300; ++y)
    for (int x = 0; x < 300; ++x) {
      const bool inside = x >= px && x < px + 37 && y >= py && y < py + 23;
      for (int k = 0; k < 3; ++k)
        ASSERT_EQ(c.image.at(x, y, k), inside ? opaque.at(x - px, y - py, k) : bg.at(x, y, k)) << x << "," << y;
      ASSERT_EQ(c.mask.get(x, y), inside);
    }
}

TEST(Compose, TooLarge) {
  const Image bg = random_image(300, 300, 3, 4);
  EXPECT_DISHWX_ERROR(compose_at(Image(100, 100, 4, 255), bg, Placement{0.0, 4.0, 0, 0}), ErrorCode::CutoutTooLarge);
  CompositionParams huge;
  huge.scale_min = huge.scale_max = 1.5;
  Rng rng(1);
  EXPECT_DISHWX_ERROR(compose(Image(40, 40, 4, 255), bg, huge, rng), ErrorCode::CutoutTooLarge);
}

TEST(Compose, CutoutStaysInFrameAndIsDeterministic) {
  const Image bg = random_image(320, 240, 3, 5);
  const Image cut = disc_cutout("x", DishCondition::Snow, 60, 6).rgba;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng a(seed), b(seed);
    const Composite ca = compose(cut, bg, CompositionParams{}, a);
    const Composite cb = compose(cut, bg, CompositionParams{}, b);
    ASSERT_EQ(ca.image, cb.image);
    EXPECT_EQ(ca.image.width(), 300);
    EXPECT_EQ(ca.image.height(), 300);
    // Longest transformed extent stays within the configured fraction.
    const auto box = bounding_box(ca.mask);
    ASSERT_TRUE(box.has_value());
    EXPECT_LE(std::max(box->width(), box->height()), static_cast<int>(0.8 * 300) + 2);
  }
}

class DatasetTest : public ::testing::Test {
 protected:
  CutoutPool cutouts = make_cutouts(4);
  BackgroundPool backgrounds = make_backgrounds(2);
};

TEST_F(DatasetTest, InitialFivePerCombination) {
  TempDir dir;
  const auto m = generate_dataset({Scenario::Initial, 5, 9}, cutouts, backgrounds, dir.path().string());
  EXPECT_EQ(m.samples.size(), 40u);
  EXPECT_TRUE(m.balanced());
  EXPECT_EQ(m.combination_counts().size(), 8u);
}

TEST_F(DatasetTest, InitialTenPerCombination) {
  TempDir dir;
  const auto m = generate_dataset({Scenario::Initial, 10, 9}, cutouts, backgrounds, dir.path().string());
  EXPECT_EQ(m.samples.size(), 80u);
  EXPECT_TRUE(m.balanced());
}

TEST_F(DatasetTest, ExtendedFifteenPerCombination) {
  TempDir dir;
  const auto m = generate_dataset({Scenario::Extended, 15, 9}, cutouts, backgrounds, dir.path().string());
  EXPECT_EQ(m.samples.size(), 180u);
  EXPECT_EQ(m.combination_counts().size(), 12u);
  for (const auto& [k, v] : m.combination_counts()) EXPECT_EQ(v, 15);
}

TEST_F(DatasetTest, ImagesAre300Rgb) {
  TempDir dir;
  const auto m = generate_dataset({Scenario::Initial, 2, 3}, cutouts, backgrounds, dir.path().string());
  for (const auto& s : m.samples) {
    const Image img = load_image(m.resolve(s.image_path));
    EXPECT_EQ(img.width(), 300);
    EXPECT_EQ(img.height(), 300);
    EXPECT_EQ(img.channels(), 3);
  }
}

TEST_F(DatasetTest, MissingConditionPool) {
  TempDir dir;
  CutoutPool no_wet;
  for (const auto& c : cutouts)
    if (c.condition != DishCondition::Wet) no_wet.push_back(c);
  EXPECT_NO_THROW(generate_dataset({Scenario::Initial, 1, 0}, no_wet, backgrounds, dir.path().string()));
  EXPECT_DISHWX_ERROR(generate_dataset({Scenario::Extended, 1, 0}, no_wet, backgrounds, dir.path().string()),
                      ErrorCode::MissingConditionPool);
  BackgroundPool no_rain;
  for (const auto& b : backgrounds)
    if (b.condition != BackgroundCondition::Rain) no_rain.push_back(b);
  EXPECT_DISHWX_ERROR(generate_dataset({Scenario::Initial, 1, 0}, cutouts, no_rain, dir.path().string()),
                      ErrorCode::MissingConditionPool);
}

TEST_F(DatasetTest, TestSetSizes) {
  TempDir dir;
  const auto [train, val] = split_cutout_pool(cutouts, 0.5, 1);
  const auto t120 = build_test_set({Scenario::Initial, 1, 2}, val, backgrounds, 120, dir.path().string());
  EXPECT_EQ(t120.samples.size(), 120u);
  for (const auto& [k, v] : t120.combination_counts()) EXPECT_EQ(v, 15);
  const auto t180 = build_test_set({Scenario::Extended, 1, 2}, val, backgrounds, 180, dir.path().string());
  EXPECT_EQ(t180.samples.size(), 180u);
  for (const auto& [k, v] : t180.combination_counts()) EXPECT_EQ(v, 15);
  EXPECT_DISHWX_ERROR(build_test_set({Scenario::Initial, 1, 2}, val, backgrounds, 100, dir.path().string()),
                      ErrorCode::IndivisibleSize);
}

TEST_F(DatasetTest, TrainAndTestCutoutsDisjoint) {
  TempDir dir;
  const auto [train_pool, val_pool] = split_cutout_pool(cutouts, 0.5, 11);
  const auto train = generate_dataset({Scenario::Extended, 4, 5}, train_pool, backgrounds, dir.path().string());
  const auto test = build_test_set({Scenario::Extended, 1, 5}, val_pool, backgrounds, 24, dir.path().string());
  std::set<std::string> train_ids;
  for (const auto& s : train.samples) train_ids.insert(s.source_cutout_id);
  for (const auto& s : test.samples) EXPECT_FALSE(train_ids.count(s.source_cutout_id)) << s.source_cutout_id;
}

TEST_F(DatasetTest, RegenerationIsByteIdentical) {
  TempDir a, b;
  GenerateOptions serial, parallel;
  parallel.jobs = 3;
  const auto ma = generate_dataset({Scenario::Initial, 2, 77}, cutouts, backgrounds, a.path().string(), serial);
  const auto mb = generate_dataset({Scenario::Initial, 2, 77}, cutouts, backgrounds, b.path().string(), parallel);
  EXPECT_EQ(serialize_manifest(ma), serialize_manifest(mb));
  EXPECT_EQ(slurp(a.file("initial/train.jsonl")), slurp(b.file("initial/train.jsonl")));
  for (std::size_t i = 0; i < ma.samples.size(); ++i)
    EXPECT_EQ(slurp(ma.resolve(ma.samples[i].image_path)), slurp(mb.resolve(mb.samples[i].image_path)));
  TempDir c;
  const auto mc = generate_dataset({Scenario::Initial, 2, 78}, cutouts, backgrounds, c.path().string());
  EXPECT_NE(serialize_manifest(ma), serialize_manifest(mc));
}

TEST_F(DatasetTest, ManifestRoundTrip) {
  TempDir dir;
  const auto m = generate_dataset({Scenario::Extended, 1, 4}, cutouts, backgrounds, dir.path().string());
  const auto r = read_manifest(dir.file("extended/train.jsonl"));
  EXPECT_EQ(r.samples, m.samples);
  EXPECT_EQ(r.seed, 4u);
  EXPECT_EQ(r.scenario, Scenario::Extended);
  for (const auto& s : r.samples) EXPECT_FALSE(s.annotation_path.empty());
}

TEST(ManifestIo, Malformed) {
  TempDir dir;
  EXPECT_DISHWX_ERROR(read_manifest(dir.file("nope.jsonl")), ErrorCode::MalformedManifest);
  std::ofstream(dir.file("bad.jsonl")) << "not json\n";
  EXPECT_DISHWX_ERROR(read_manifest(dir.file("bad.jsonl")), ErrorCode::MalformedManifest);
  std::ofstream(dir.file("nohdr.jsonl")) << R"({"relative_path":"a.png"})" << "\n";
  EXPECT_DISHWX_ERROR(read_manifest(dir.file("nohdr.jsonl"), false), ErrorCode::MalformedManifest);
}

}  // namespace
}  // namespace dishwx::forge
