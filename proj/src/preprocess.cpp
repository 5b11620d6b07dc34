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

#include "habitat/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgproc.hpp>

#include "habitat/autoaugment.hpp"
#include "habitat/errors.hpp"

namespace habitat {

namespace {

void require_rgb(const cv::Mat& m) {
  if (m.empty()) throw ChannelError("empty image");
  if (m.type() != CV_8UC3)
    throw ChannelError("expected an 8-bit 3-channel RGB image, got " + std::to_string(m.channels()) +
                       " channel(s) of depth " + std::to_string(m.depth()));
}

// Grayscale weights of ITU-R 601, as used by the reference colour ops.
cv::Mat grayscale_f(const cv::Mat& rgb) {
  cv::Mat f, gray;
  rgb.convertTo(f, CV_32FC3);
  cv::transform(f, gray, cv::Matx13f(0.2989f, 0.587f, 0.114f));
  return gray;
}

cv::Mat blend(const cv::Mat& rgb, const cv::Mat& other_f3, double factor) {
  cv::Mat f, out;
  rgb.convertTo(f, CV_32FC3);
  cv::addWeighted(f, factor, other_f3, 1.0 - factor, 0.0, f);
  f.convertTo(out, CV_8UC3);  // saturating, rounds
  return out;
}

}  // namespace

void PreprocessConfig::validate() const {
  if (target_size < 32) throw ConfigError("target_size must be at least 32");
  for (double s : channel_stds)
    if (!(s > 0.0)) throw ConfigError("channel stds must be positive");
}

void AugmentConfig::validate() const {
  if (!(horizontal_flip_prob >= 0.0 && horizontal_flip_prob <= 1.0))
    throw ConfigError("horizontal_flip_prob must be in [0, 1]");
  if (!(rotation_degrees >= 0.0 && rotation_degrees <= 180.0))
    throw ConfigError("rotation_degrees must be in [0, 180]");
  const auto& j = color_jitter;
  if (!(j.brightness >= 0 && j.contrast >= 0 && j.saturation >= 0 && j.hue >= 0))
    throw ConfigError("colour jitter magnitudes must be non-negative");
  if (j.hue > 0.5) throw ConfigError("hue jitter must be at most 0.5");
}

AugmentConfig AugmentConfig::identity() {
  AugmentConfig a;
  a.horizontal_flip_prob = 0.0;
  a.rotation_degrees = 0.0;
  a.color_jitter = {0.0, 0.0, 0.0, 0.0};
  a.use_autoaugment_policy = false;
  return a;
}

cv::Mat adjust_brightness(const cv::Mat& rgb, double factor) {
  cv::Mat out;
  rgb.convertTo(out, CV_8UC3, factor);
  return out;
}

cv::Mat adjust_contrast(const cv::Mat& rgb, double factor) {
  const double mean = cv::mean(grayscale_f(rgb))[0];
  cv::Mat flat(rgb.size(), CV_32FC3, cv::Scalar::all(mean));
  return blend(rgb, flat, factor);
}

cv::Mat adjust_saturation(const cv::Mat& rgb, double factor) {
  cv::Mat gray = grayscale_f(rgb), gray3;
  cv::cvtColor(gray, gray3, cv::COLOR_GRAY2RGB);
  return blend(rgb, gray3, factor);
}

cv::Mat adjust_hue(const cv::Mat& rgb, double shift) {
  if (shift == 0.0) return rgb.clone();
  cv::Mat f, hsv;
  rgb.convertTo(f, CV_32FC3, 1.0 / 255.0);
  cv::cvtColor(f, hsv, cv::COLOR_RGB2HSV);  // H in [0, 360)
  const float delta = static_cast<float>(shift * 360.0);
  hsv.forEach<cv::Vec3f>([delta](cv::Vec3f& p, const int*) {
    float h = std::fmod(p[0] + delta, 360.0f);
    if (h < 0) h += 360.0f;
    p[0] = h;
  });
  cv::Mat back, out;
  cv::cvtColor(hsv, back, cv::COLOR_HSV2RGB);
  back.convertTo(out, CV_8UC3, 255.0);
  return out;
}

cv::Mat rotate_image(const cv::Mat& rgb, double degrees, bool reflect_fill) {
  if (degrees == 0.0) return rgb.clone();
  const cv::Point2f center((rgb.cols - 1) * 0.5f, (rgb.rows - 1) * 0.5f);
  const cv::Mat m = cv::getRotationMatrix2D(center, degrees, 1.0);
  cv::Mat out;
  if (reflect_fill)
    cv::warpAffine(rgb, out, m, rgb.size(), cv::INTER_LINEAR, cv::BORDER_REFLECT_101);
  else
    cv::warpAffine(rgb, out, m, rgb.size(), cv::INTER_NEAREST, cv::BORDER_CONSTANT, cv::Scalar::all(0));
  return out;
}

cv::Mat resize_square(const cv::Mat& rgb, int size) {
  require_rgb(rgb);
  if (rgb.cols == size && rgb.rows == size) return rgb.clone();
  const bool shrinking = rgb.cols >= size && rgb.rows >= size;
  cv::Mat out;
  cv::resize(rgb, out, cv::Size(size, size), 0, 0, shrinking ? cv::INTER_AREA : cv::INTER_LINEAR);
  return out;
}

nn::Tensor normalize(const cv::Mat& resized, const PreprocessConfig& config) {
  require_rgb(resized);
  const int h = resized.rows, w = resized.cols;
  nn::Tensor out({3, h, w});
  float* dst = out.data();
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  for (int y = 0; y < h; ++y) {
    const auto* row = resized.ptr<cv::Vec3b>(y);
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = row[x][c] / 255.0;
        dst[c * plane + static_cast<std::int64_t>(y) * w + x] =
            static_cast<float>((v - config.channel_means[c]) / config.channel_stds[c]);
      }
    }
  }
  return out;
}

nn::Tensor denormalize(const nn::Tensor& normalized, const PreprocessConfig& config) {
  if (normalized.rank() != 3 || normalized.dim(0) != 3)
    throw ShapeError("denormalize expects a 3 x H x W tensor, got " + nn::shape_string(normalized.shape()));
  nn::Tensor out = normalized;
  const std::int64_t plane = normalized.dim(1) * normalized.dim(2);
  for (int c = 0; c < 3; ++c)
    for (std::int64_t i = 0; i < plane; ++i) {
      auto& v = out[c * plane + i];
      v = static_cast<float>(static_cast<double>(v) * config.channel_stds[c] + config.channel_means[c]);
    }
  return out;
}

nn::Tensor preprocess_eval(const cv::Mat& rgb, const PreprocessConfig& config) {
  require_rgb(rgb);
  config.validate();
  return normalize(resize_square(rgb, config.target_size), config);
}

cv::Mat augment_raster(const cv::Mat& rgb, const AugmentConfig& aug, Engine& draw) {
  require_rgb(rgb);
  aug.validate();
  cv::Mat img = rgb.clone();

  if (uniform01(draw) < aug.horizontal_flip_prob) cv::flip(img, img, 1);

  const double angle = uniform(draw, -aug.rotation_degrees, aug.rotation_degrees);
  if (aug.rotation_degrees > 0.0) img = rotate_image(img, angle, /*reflect_fill=*/true);

  // Jitter factors are drawn first, then applied in a random order.
  const auto& j = aug.color_jitter;
  const double b = uniform(draw, std::max(0.0, 1.0 - j.brightness), 1.0 + j.brightness);
  const double c = uniform(draw, std::max(0.0, 1.0 - j.contrast), 1.0 + j.contrast);
  const double s = uniform(draw, std::max(0.0, 1.0 - j.saturation), 1.0 + j.saturation);
  const double h = uniform(draw, -j.hue, j.hue);
  std::vector<int> order{0, 1, 2, 3};
  shuffle(order, draw);
  for (int op : order) {
    switch (op) {
      case 0: if (j.brightness > 0) img = adjust_brightness(img, b); break;
      case 1: if (j.contrast > 0) img = adjust_contrast(img, c); break;
      case 2: if (j.saturation > 0) img = adjust_saturation(img, s); break;
      case 3: if (j.hue > 0) img = adjust_hue(img, h); break;
    }
  }

  if (aug.use_autoaugment_policy) img = autoaugment::apply_random_subpolicy(img, draw);
  return img;
}

nn::Tensor preprocess_train(const cv::Mat& rgb, const PreprocessConfig& pre, const AugmentConfig& aug,
                            Engine& draw) {
  pre.validate();
  return normalize(resize_square(augment_raster(rgb, aug, draw), pre.target_size), pre);
}

}  // namespace habitat
