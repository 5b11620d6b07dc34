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

#include <array>
#include <cstdint>

#include <opencv2/core.hpp>

#include "habitat/nn/tensor.hpp"
#include "habitat/rng.hpp"

namespace habitat {

/// ImageNet statistics; the pretrained backbones expect them.
struct PreprocessConfig {
  int target_size = 224;
  std::array<double, 3> channel_means{0.485, 0.456, 0.406};
  std::array<double, 3> channel_stds{0.229, 0.224, 0.225};

  void validate() const;
};

struct ColorJitter {
  double brightness = 0.2;
  double contrast = 0.2;
  double saturation = 0.2;
  double hue = 0.05;  ///< fraction of a full hue turn, at most 0.5
};

struct AugmentConfig {
  double horizontal_flip_prob = 0.5;
  double rotation_degrees = 15.0;
  ColorJitter color_jitter;
  bool use_autoaugment_policy = true;
  std::uint64_t seed = 0;

  void validate() const;
  /// Flip, rotation, jitter and policy all disabled.
  static AugmentConfig identity();
};

/// Resize + normalize. `rgb` must be CV_8UC3 (ChannelError otherwise).
/// Output is 3 × target × target with (v/255 - mean) / std per channel.
nn::Tensor preprocess_eval(const cv::Mat& rgb, const PreprocessConfig& config);

/// Stochastic training pipeline: horizontal flip, rotation (edge-reflected
/// fill), colour jitter in random order, optional ImageNet AutoAugment
/// sub-policy, then resize + normalize. Every draw comes from `draw`.
nn::Tensor preprocess_train(const cv::Mat& rgb, const PreprocessConfig& pre, const AugmentConfig& aug,
                            Engine& draw);

/// Raster part of the training pipeline, before resize.
cv::Mat augment_raster(const cv::Mat& rgb, const AugmentConfig& aug, Engine& draw);

/// Bilinear resize (area filter when shrinking) to size × size.
cv::Mat resize_square(const cv::Mat& rgb, int size);
nn::Tensor normalize(const cv::Mat& resized_rgb, const PreprocessConfig& config);
/// Inverse of normalize: returns v/255 per channel as a 3 × H × W tensor.
nn::Tensor denormalize(const nn::Tensor& normalized, const PreprocessConfig& config);

// Single colour operations, exposed for tests and the policy table.
cv::Mat adjust_brightness(const cv::Mat& rgb, double factor);
cv::Mat adjust_contrast(const cv::Mat& rgb, double factor);
cv::Mat adjust_saturation(const cv::Mat& rgb, double factor);
cv::Mat adjust_hue(const cv::Mat& rgb, double shift);
cv::Mat rotate_image(const cv::Mat& rgb, double degrees, bool reflect_fill);

}  // namespace habitat
