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

#include "habitat/autoaugment.hpp"

#include <array>
#include <cmath>

#include <opencv2/imgproc.hpp>

#include "habitat/errors.hpp"
#include "habitat/preprocess.hpp"

namespace habitat::autoaugment {

namespace {

constexpr std::nullopt_t kNone = std::nullopt;

constexpr std::array<SubPolicy, 25> kImageNet{{
    {{{Op::posterize, 0.4, 8}, {Op::rotate, 0.6, 9}}},
    {{{Op::solarize, 0.6, 5}, {Op::auto_contrast, 0.6, kNone}}},
    {{{Op::equalize, 0.8, kNone}, {Op::equalize, 0.6, kNone}}},
    {{{Op::posterize, 0.6, 7}, {Op::posterize, 0.6, 6}}},
    {{{Op::equalize, 0.4, kNone}, {Op::solarize, 0.2, 4}}},
    {{{Op::equalize, 0.4, kNone}, {Op::rotate, 0.8, 8}}},
    {{{Op::solarize, 0.6, 3}, {Op::equalize, 0.6, kNone}}},
    {{{Op::posterize, 0.8, 5}, {Op::equalize, 1.0, kNone}}},
    {{{Op::rotate, 0.2, 3}, {Op::solarize, 0.6, 8}}},
    {{{Op::equalize, 0.6, kNone}, {Op::posterize, 0.4, 6}}},
    {{{Op::rotate, 0.8, 8}, {Op::color, 0.4, 0}}},
    {{{Op::rotate, 0.4, 9}, {Op::equalize, 0.6, kNone}}},
    {{{Op::equalize, 0.0, kNone}, {Op::equalize, 0.8, kNone}}},
    {{{Op::invert, 0.6, kNone}, {Op::equalize, 1.0, kNone}}},
    {{{Op::color, 0.6, 4}, {Op::contrast, 1.0, 8}}},
    {{{Op::rotate, 0.8, 8}, {Op::color, 1.0, 2}}},
    {{{Op::color, 0.8, 8}, {Op::solarize, 0.8, 7}}},
    {{{Op::sharpness, 0.4, 7}, {Op::invert, 0.6, kNone}}},
    {{{Op::shear_x, 0.6, 5}, {Op::equalize, 1.0, kNone}}},
    {{{Op::color, 0.4, 0}, {Op::equalize, 0.6, kNone}}},
    {{{Op::equalize, 0.4, kNone}, {Op::solarize, 0.2, 4}}},
    {{{Op::solarize, 0.6, 5}, {Op::auto_contrast, 0.6, kNone}}},
    {{{Op::invert, 0.6, kNone}, {Op::equalize, 1.0, kNone}}},
    {{{Op::color, 0.6, 4}, {Op::contrast, 1.0, 8}}},
    {{{Op::equalize, 0.8, kNone}, {Op::equalize, 0.6, kNone}}},
}};

cv::Mat apply_lut(const cv::Mat& rgb, const std::array<std::array<uchar, 256>, 3>& luts) {
  cv::Mat out = rgb.clone();
  out.forEach<cv::Vec3b>([&](cv::Vec3b& p, const int*) {
    for (int c = 0; c < 3; ++c) p[c] = luts[c][p[c]];
  });
  return out;
}

}  // namespace

std::string_view op_name(Op op) {
  switch (op) {
    case Op::shear_x: return "ShearX";
    case Op::rotate: return "Rotate";
    case Op::color: return "Color";
    case Op::contrast: return "Contrast";
    case Op::sharpness: return "Sharpness";
    case Op::posterize: return "Posterize";
    case Op::solarize: return "Solarize";
    case Op::auto_contrast: return "AutoContrast";
    case Op::equalize: return "Equalize";
    case Op::invert: return "Invert";
  }
  return "?";
}

std::span<const SubPolicy> imagenet_policy() {
  return kImageNet;
}

double magnitude(Op op, int bin) {
  if (bin < 0 || bin >= kMagnitudeBins) throw ConfigError("magnitude bin out of range");
  const double t = bin / double(kMagnitudeBins - 1);
  switch (op) {
    case Op::shear_x: return 0.3 * t;
    case Op::rotate: return 30.0 * t;
    case Op::color:
    case Op::contrast:
    case Op::sharpness: return 0.9 * t;
    case Op::posterize: return 8.0 - std::nearbyint(bin / ((kMagnitudeBins - 1) / 4.0));
    case Op::solarize: return 255.0 * (1.0 - t);
    default: return 0.0;
  }
}

bool is_signed(Op op) {
  return op == Op::shear_x || op == Op::rotate || op == Op::color || op == Op::contrast || op == Op::sharpness;
}

cv::Mat posterize(const cv::Mat& rgb, int bits) {
  const uchar mask = static_cast<uchar>(~((1u << (8 - bits)) - 1u));
  cv::Mat out;
  cv::bitwise_and(rgb, cv::Scalar::all(mask), out);
  return out;
}

cv::Mat solarize(const cv::Mat& rgb, double threshold) {
  std::array<std::array<uchar, 256>, 3> luts{};
  for (int v = 0; v < 256; ++v)
    for (auto& l : luts) l[v] = static_cast<uchar>(v >= threshold ? 255 - v : v);
  return apply_lut(rgb, luts);
}

cv::Mat auto_contrast(const cv::Mat& rgb) {
  std::vector<cv::Mat> ch;
  cv::split(rgb, ch);
  std::array<std::array<uchar, 256>, 3> luts{};
  for (int c = 0; c < 3; ++c) {
    double lo, hi;
    cv::minMaxLoc(ch[c], &lo, &hi);
    for (int v = 0; v < 256; ++v) {
      if (hi <= lo) {
        luts[c][v] = static_cast<uchar>(v);
      } else {
        const double s = (v - lo) * 255.0 / (hi - lo);
        luts[c][v] = static_cast<uchar>(std::clamp(s, 0.0, 255.0));
      }
    }
  }
  return apply_lut(rgb, luts);
}

// Histogram equalisation per channel with the PIL step rule: the last
// occupied bin is excluded from the step, and single-valued channels are
// left untouched.
cv::Mat equalize(const cv::Mat& rgb) {
  std::array<std::array<uchar, 256>, 3> luts{};
  std::array<std::array<long, 256>, 3> hist{};
  for (int y = 0; y < rgb.rows; ++y) {
    const auto* row = rgb.ptr<cv::Vec3b>(y);
    for (int x = 0; x < rgb.cols; ++x)
      for (int c = 0; c < 3; ++c) ++hist[c][row[x][c]];
  }
  for (int c = 0; c < 3; ++c) {
    long total = 0, last = 0;
    for (int v = 0; v < 256; ++v) {
      if (hist[c][v]) last = hist[c][v];
      total += hist[c][v];
    }
    const long step = (total - last) / 255;
    if (step == 0) {
      for (int v = 0; v < 256; ++v) luts[c][v] = static_cast<uchar>(v);
      continue;
    }
    long cum = step / 2;
    for (int v = 0; v < 256; ++v) {
      luts[c][v] = static_cast<uchar>(std::min(255L, cum / step));
      cum += hist[c][v];
    }
  }
  return apply_lut(rgb, luts);
}

cv::Mat invert(const cv::Mat& rgb) {
  cv::Mat out;
  cv::bitwise_not(rgb, out);
  return out;
}

cv::Mat sharpness(const cv::Mat& rgb, double factor) {
  if (rgb.rows <= 2 || rgb.cols <= 2) return rgb.clone();
  const cv::Matx33f kernel(1, 1, 1, 1, 5, 1, 1, 1, 1);
  cv::Mat f, smooth;
  rgb.convertTo(f, CV_32FC3);
  cv::filter2D(f, smooth, CV_32F, cv::Mat(kernel) / 13.0f);
  // The smoothed image keeps the original border pixels.
  cv::Mat degenerate = f.clone();
  const cv::Rect inner(1, 1, rgb.cols - 2, rgb.rows - 2);
  smooth(inner).copyTo(degenerate(inner));
  // Match the 8-bit rounding of the reference degenerate image.
  degenerate.convertTo(degenerate, CV_8UC3);
  degenerate.convertTo(degenerate, CV_32FC3);
  cv::Mat out;
  cv::addWeighted(f, factor, degenerate, 1.0 - factor, 0.0, f);
  f.convertTo(out, CV_8UC3);
  return out;
}

cv::Mat shear_x(const cv::Mat& rgb, double amount) {
  const cv::Matx23d m(1.0, amount, 0.0, 0.0, 1.0, 0.0);
  cv::Mat out;
  cv::warpAffine(rgb, out, cv::Mat(m), rgb.size(), cv::INTER_NEAREST, cv::BORDER_CONSTANT, cv::Scalar::all(0));
  return out;
}

cv::Mat apply(const cv::Mat& rgb, Op op, double m) {
  switch (op) {
    case Op::shear_x: return shear_x(rgb, m);
    case Op::rotate: return rotate_image(rgb, m, /*reflect_fill=*/false);
    case Op::color: return adjust_saturation(rgb, 1.0 + m);
    case Op::contrast: return adjust_contrast(rgb, 1.0 + m);
    case Op::sharpness: return sharpness(rgb, 1.0 + m);
    case Op::posterize: return posterize(rgb, static_cast<int>(m));
    case Op::solarize: return solarize(rgb, m);
    case Op::auto_contrast: return auto_contrast(rgb);
    case Op::equalize: return equalize(rgb);
    case Op::invert: return invert(rgb);
  }
  return rgb.clone();
}

cv::Mat apply_random_subpolicy(const cv::Mat& rgb, Engine& draw) {
  const auto& policy = kImageNet[uniform_index(draw, kImageNet.size())];
  const double probs[2] = {uniform01(draw), uniform01(draw)};
  const bool negate[2] = {uniform_index(draw, 2) == 0, uniform_index(draw, 2) == 0};
  cv::Mat img = rgb;
  for (int i = 0; i < 2; ++i) {
    const auto& step = policy[i];
    if (probs[i] > step.probability) continue;
    double m = step.magnitude_bin ? magnitude(step.op, *step.magnitude_bin) : 0.0;
    if (is_signed(step.op) && negate[i]) m = -m;
    img = apply(img, step.op, m);
  }
  return img.data == rgb.data ? rgb.clone() : img;
}

}  // namespace habitat::autoaugment
