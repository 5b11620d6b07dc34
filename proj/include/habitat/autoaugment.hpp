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

#pragma once

// AutoAugment with the published ImageNet policy (25 two-step sub-policies,
// magnitudes quantized into 10 bins). Op semantics follow the torchvision
// implementation that the pretrained-model ecosystem standardised on.

#include <array>
#include <optional>
#include <span>
#include <string_view>

#include <opencv2/core.hpp>

#include "habitat/rng.hpp"

namespace habitat::autoaugment {

enum class Op {
  shear_x,
  rotate,
  color,
  contrast,
  sharpness,
  posterize,
  solarize,
  auto_contrast,
  equalize,
  invert,
};

std::string_view op_name(Op op);

struct Step {
  Op op;
  double probability;
  std::optional<int> magnitude_bin;  ///< 0..9; absent for parameterless ops
};

using SubPolicy = std::array<Step, 2>;

constexpr int kMagnitudeBins = 10;

std::span<const SubPolicy> imagenet_policy();

/// Magnitude for a bin before sign randomisation.
double magnitude(Op op, int bin);
bool is_signed(Op op);

cv::Mat apply(const cv::Mat& rgb, Op op, double magnitude);

cv::Mat posterize(const cv::Mat& rgb, int bits);
cv::Mat solarize(const cv::Mat& rgb, double threshold);
cv::Mat auto_contrast(const cv::Mat& rgb);
cv::Mat equalize(const cv::Mat& rgb);
cv::Mat invert(const cv::Mat& rgb);
cv::Mat sharpness(const cv::Mat& rgb, double factor);
cv::Mat shear_x(const cv::Mat& rgb, double amount);

/// Draws one sub-policy and applies it.
cv::Mat apply_random_subpolicy(const cv::Mat& rgb, Engine& draw);

}  // namespace habitat::autoaugment
