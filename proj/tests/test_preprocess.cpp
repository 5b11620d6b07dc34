/*
 * Copyright 2026 The Habitat Classifier Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <doctest.h>

#include "habitat/autoaugment.hpp"
#include "habitat/balance.hpp"
#include "habitat/errors.hpp"
#include "habitat/preprocess.hpp"
#include "support.hpp"

using namespace habitat;
using habitat::test::solid;

namespace {

ImageRecord original(const std::string& label, std::size_t i) {
  ImageRecord r;
  r.id = label + "/" + std::to_string(i) + ".jpg";
  r.path = r.id;
  r.label = label;
  return r;
}

std::vector<ImageRecord> originals(const std::string& label, std::size_t n) {
  std::vector<ImageRecord> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(original(label, i));
  return out;
}

std::size_t count_label(const std::vector<ImageRecord>& rs, const std::string& label, Origin o) {
  std::size_t n = 0;
  for (const auto& r : rs) n += r.label == label && r.origin == o;
  return n;
}

cv::Mat noise(int rows, int cols, std::uint64_t seed) {
  test::Gen g(seed);
  cv::Mat m(rows, cols, CV_8UC3);
  for (int y = 0; y < rows; ++y)
    for (int x = 0; x < cols; ++x)
      for (int c = 0; c < 3; ++c) m.at<cv::Vec3b>(y, x)[c] = static_cast<unsigned char>(g.integer(0, 255));
  return m;
}

}  // namespace

TEST_CASE("normalization defaults are the ImageNet statistics") {
  const PreprocessConfig cfg;
  CHECK(cfg.target_size == 224);
  CHECK(cfg.channel_means == std::array<double, 3>{0.485, 0.456, 0.406});
  CHECK(cfg.channel_stds == std::array<double, 3>{0.229, 0.224, 0.225});
}

TEST_CASE("preprocess_eval arithmetic") {
  PreprocessConfig cfg;
  cfg.target_size = 32;
  const auto t = preprocess_eval(solid(40, 50, 255, 124, 0), cfg);
  REQUIRE(t.shape() == nn::Shape{3, 32, 32});
  const std::int64_t plane = 32 * 32;
  // (1.0 - 0.485) / 0.229
  CHECK(std::abs(t[0] - 2.2489083) < 1e-4);
  CHECK(std::abs(t[plane] - (124.0 / 255.0 - 0.456) / 0.224) < 1e-5);
  CHECK(std::abs(t[2 * plane] - (0.0 - 0.406) / 0.225) < 1e-5);

  // A channel at 124/255 sits within half a grey level of the red mean.
  const auto r = preprocess_eval(solid(8, 8, 124, 0, 0), cfg);
  CHECK(std::abs(r[0]) < 0.5 / 255.0 / 0.229 + 1e-6);

  // Mean maps to exactly zero when it is representable.
  PreprocessConfig exact = cfg;
  exact.channel_means = {124.0 / 255.0, 0.0, 1.0};
  const auto z = preprocess_eval(solid(8, 8, 124, 0, 255), exact);
  for (std::int64_t i = 0; i < z.numel(); ++i) CHECK(std::abs(z[i]) < 1e-6);
}

TEST_CASE("preprocess_eval is deterministic and invertible") {
  PreprocessConfig cfg;
  cfg.target_size = 48;
  const auto img = noise(48, 48, 3);
  const auto a = preprocess_eval(img, cfg);
  CHECK(a == preprocess_eval(img, cfg));
  const auto back = denormalize(a, cfg);
  const std::int64_t plane = 48 * 48;
  float worst = 0.0f;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 48; ++y)
      for (int x = 0; x < 48; ++x)
        worst = std::max(worst, static_cast<float>(std::abs(back[c * plane + y * 48 + x] -
                                                            img.at<cv::Vec3b>(y, x)[c] / 255.0)));
  CHECK(worst < 1e-6);
}

TEST_CASE("non-RGB input is a channel error") {
  PreprocessConfig cfg;
  cv::Mat gray(10, 10, CV_8UC1, cv::Scalar(3));
  CHECK_THROWS_AS(preprocess_eval(gray, cfg), ChannelError);
  Engine eng(1);
  CHECK_THROWS_AS(preprocess_train(gray, cfg, AugmentConfig{}, eng), ChannelError);
  CHECK_THROWS_AS(preprocess_eval(cv::Mat(), cfg), ChannelError);
}

TEST_CASE("config validation") {
  PreprocessConfig p;
  p.target_size = 16;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = {};
  p.channel_stds[1] = 0.0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  AugmentConfig a;
  a.rotation_degrees = 181;
  CHECK_THROWS_AS(a.validate(), ConfigError);
  a = {};
  a.color_jitter.contrast = -0.1;
  CHECK_THROWS_AS(a.validate(), ConfigError);
  BalanceConfig b;
  b.target_per_class = 0;
  CHECK_THROWS_AS(b.validate(), ConfigError);
  AugmentConfig d;
  CHECK(d.horizontal_flip_prob == 0.5);
  CHECK(d.rotation_degrees == 15.0);
  CHECK(d.color_jitter.brightness == 0.2);
  CHECK(d.color_jitter.hue == 0.05);
  CHECK(d.use_autoaugment_policy);
}

TEST_CASE("identity augmentation equals the eval pipeline") {
  PreprocessConfig cfg;
  cfg.target_size = 32;
  const auto img = noise(40, 40, 9);
  Engine eng(5);
  CHECK(preprocess_train(img, cfg, AugmentConfig::identity(), eng) == preprocess_eval(img, cfg));
}

TEST_CASE("forced flip moves the top-left pixel to the top-right") {
  cv::Mat img = solid(6, 9, 0, 0, 0);
  img.at<cv::Vec3b>(0, 0) = {255, 255, 255};
  auto aug = AugmentConfig::identity();
  aug.horizontal_flip_prob = 1.0;
  Engine eng(11);
  const auto out = augment_raster(img, aug, eng);
  CHECK(out.at<cv::Vec3b>(0, 8) == cv::Vec3b(255, 255, 255));
  CHECK(out.at<cv::Vec3b>(0, 0) == cv::Vec3b(0, 0, 0));
}

TEST_CASE("training pipeline is deterministic given the draw state") {
  PreprocessConfig cfg;
  cfg.target_size = 32;
  const AugmentConfig aug;  // everything on, including the policy
  const auto img = noise(40, 40, 21);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Engine a(seed), b(seed);
    CHECK(preprocess_train(img, cfg, aug, a) == preprocess_train(img, cfg, aug, b));
  }
  Engine a(1), b(2);
  CHECK_FALSE(preprocess_train(img, cfg, aug, a) == preprocess_train(img, cfg, aug, b));
}

TEST_CASE("rotation with reflected fill leaves no black corners") {
  const auto img = solid(20, 20, 200, 100, 50);
  const auto out = rotate_image(img, 15.0, true);
  CHECK(out.at<cv::Vec3b>(0, 0) == cv::Vec3b(200, 100, 50));
  const auto filled = rotate_image(img, 15.0, false);
  CHECK(filled.at<cv::Vec3b>(0, 0) == cv::Vec3b(0, 0, 0));
}

TEST_CASE("colour operations at their neutral factor are identities") {
  const auto img = noise(12, 12, 4);
  auto same = [&](const cv::Mat& m) { return cv::norm(m, img, cv::NORM_INF) <= 1.0; };
  CHECK(same(adjust_brightness(img, 1.0)));
  CHECK(same(adjust_contrast(img, 1.0)));
  CHECK(same(adjust_saturation(img, 1.0)));
  CHECK(same(adjust_hue(img, 0.0)));
  // Zero saturation gives a grey image.
  const auto g = adjust_saturation(img, 0.0);
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 12; ++x) {
      const auto p = g.at<cv::Vec3b>(y, x);
      CHECK(p[0] == p[1]);
      CHECK(p[1] == p[2]);
    }
}

TEST_CASE("autoaugment policy table and ops") {
  namespace aa = autoaugment;
  CHECK(aa::imagenet_policy().size() == 25);
  for (const auto& sp : aa::imagenet_policy())
    for (const auto& step : sp) {
      CHECK(step.probability >= 0.0);
      CHECK(step.probability <= 1.0);
    }
  CHECK(aa::magnitude(aa::Op::rotate, 9) == doctest::Approx(30.0));
  CHECK(aa::magnitude(aa::Op::posterize, 0) == 8.0);
  CHECK(aa::magnitude(aa::Op::solarize, 0) == doctest::Approx(255.0));
  CHECK_THROWS_AS(aa::magnitude(aa::Op::rotate, 10), ConfigError);

  const auto px = [](const cv::Mat& m) { return m.at<cv::Vec3b>(0, 0); };
  const auto img = solid(4, 4, 200, 100, 7);
  CHECK(px(aa::invert(img)) == cv::Vec3b(55, 155, 248));
  CHECK(px(aa::posterize(img, 4)) == cv::Vec3b(192, 96, 0));
  CHECK(px(aa::solarize(img, 128)) == cv::Vec3b(55, 100, 7));

  Engine a(3), b(3);
  const auto n = noise(16, 16, 8);
  CHECK(cv::norm(aa::apply_random_subpolicy(n, a), aa::apply_random_subpolicy(n, b), cv::NORM_INF) == 0.0);
}

TEST_CASE("balancing subsamples large classes") {
  BalanceConfig cfg{1000, 17};
  const auto rs = originals("AH", 2359);  // AH count in the published table
  const auto out = balance_class_counts(rs, cfg);
  CHECK(out.size() == 1000);
  CHECK(count_label(out, "AH", Origin::original) == 1000);
  std::set<std::string> ids;
  for (const auto& r : out) ids.insert(r.id);
  CHECK(ids.size() == 1000);
}

TEST_CASE("balancing leaves a class at the target unchanged") {
  const auto rs = originals("CS", 1000);
  auto out = balance_class_counts(rs, BalanceConfig{1000, 3});
  CHECK(out.size() == 1000);
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  auto sorted = rs;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  CHECK(out == sorted);
}

TEST_CASE("balancing expands small classes round robin") {
  const auto rs = originals("BSSP", 224);  // BSSP count in the published table
  const auto out = balance_class_counts(rs, BalanceConfig{1000, 5});
  CHECK(count_label(out, "BSSP", Origin::original) == 224);
  CHECK(count_label(out, "BSSP", Origin::augmented) == 776);

  // Recount parents independently.
  std::map<std::string, int> children;
  std::set<std::uint64_t> seeds;
  std::set<std::string> ids;
  for (const auto& r : out) {
    ids.insert(r.id);
    if (r.origin != Origin::augmented) continue;
    REQUIRE(r.parent_id.has_value());
    REQUIRE(r.augmentation_seed.has_value());
    children[*r.parent_id]++;
    seeds.insert(*r.augmentation_seed);
  }
  CHECK(ids.size() == 1000);
  CHECK(children.size() == 224);
  int fours = 0;
  for (const auto& [parent, n] : children) {
    CHECK((n == 3 || n == 4));
    fours += n == 4;
  }
  CHECK(fours == 776 - 3 * 224);
  CHECK(seeds.size() == 776);
}

TEST_CASE("balancing is deterministic and order independent") {
  auto rs = originals("WAT", 45);
  const auto more = originals("IG", 300);
  rs.insert(rs.end(), more.begin(), more.end());
  const BalanceConfig cfg{100, 99};
  const auto a = balance_class_counts(rs, cfg);
  auto shuffled = rs;
  Engine eng(4);
  shuffle(shuffled, eng);
  CHECK(balance_class_counts(shuffled, cfg) == a);
  CHECK_FALSE(balance_class_counts(rs, BalanceConfig{100, 100}) == a);
  CHECK(balanced_set_from_jsonl(balanced_set_to_jsonl(a)).size() == a.size());
}

TEST_CASE("balancing errors") {
  CHECK_THROWS_AS(balance_class_counts({}, BalanceConfig{}), ValidationError);
  auto rs = originals("WAT", 3);
  const std::vector<std::string> required = {"WAT", "BOG"};
  try {
    balance_class_counts(rs, BalanceConfig{}, required);
    FAIL("missing class accepted");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("BOG") != std::string::npos);
  }
  rs[0].origin = Origin::augmented;
  rs[0].parent_id = rs[1].id;
  CHECK_THROWS_AS(balance_class_counts(rs, BalanceConfig{}), ValidationError);
}
