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

#include "habitat/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "habitat/errors.hpp"
#include "habitat/fs_util.hpp"

namespace habitat {

namespace {

bool jpeg_has_eoi(std::span<const unsigned char> b) {
  // Some encoders pad after EOI; look in the tail only.
  const std::size_t window = std::min<std::size_t>(b.size(), 512);
  for (std::size_t i = b.size() - window; i + 1 < b.size(); ++i) {
    if (b[i] == 0xFF && b[i + 1] == 0xD9) return true;
  }
  return false;
}

bool png_has_iend(std::span<const unsigned char> b) {
  static constexpr unsigned char kIend[] = {'I', 'E', 'N', 'D'};
  const std::size_t window = std::min<std::size_t>(b.size(), 64);
  auto tail = b.subspan(b.size() - window);
  return std::search(tail.begin(), tail.end(), std::begin(kIend), std::end(kIend)) != tail.end();
}

}  // namespace

std::string_view format_name(ImageFormat f) {
  return f == ImageFormat::jpeg ? "jpeg" : "png";
}

std::optional<ImageFormat> detect_format(std::span<const unsigned char> b) {
  if (b.size() >= 3 && b[0] == 0xFF && b[1] == 0xD8 && b[2] == 0xFF) return ImageFormat::jpeg;
  static constexpr unsigned char kPng[] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  if (b.size() >= 8 && std::equal(std::begin(kPng), std::end(kPng), b.begin())) return ImageFormat::png;
  return std::nullopt;
}

bool has_image_extension(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".jpg" || ext == ".jpeg" || ext == ".png";
}

cv::Mat decode_rgb(std::span<const unsigned char> bytes) {
  const auto format = detect_format(bytes);
  if (!format) throw DecodeError("unrecognised image format (expected jpeg or png)");
  if (*format == ImageFormat::jpeg && !jpeg_has_eoi(bytes))
    throw DecodeError("truncated jpeg stream (no end-of-image marker)");
  if (*format == ImageFormat::png && !png_has_iend(bytes))
    throw DecodeError("truncated png stream (no IEND chunk)");

  cv::Mat raw;
  try {
    const cv::Mat buf(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<unsigned char*>(bytes.data()));
    raw = cv::imdecode(buf, cv::IMREAD_UNCHANGED | cv::IMREAD_IGNORE_ORIENTATION);
  } catch (const cv::Exception& e) {
    throw DecodeError(std::string("decoder failure: ") + e.what());
  }
  if (raw.empty()) throw DecodeError(std::string(format_name(*format)) + " decoder rejected the stream");
  if (raw.depth() == CV_16U) raw.convertTo(raw, CV_8U, 1.0 / 257.0);
  if (raw.depth() != CV_8U) throw DecodeError("unsupported sample depth");

  cv::Mat rgb;
  switch (raw.channels()) {
    case 1: cv::cvtColor(raw, rgb, cv::COLOR_GRAY2RGB); break;
    case 3: cv::cvtColor(raw, rgb, cv::COLOR_BGR2RGB); break;
    case 4: cv::cvtColor(raw, rgb, cv::COLOR_BGRA2RGB); break;
    default: throw DecodeError("unsupported channel count " + std::to_string(raw.channels()));
  }
  return rgb;
}

cv::Mat load_rgb(const std::filesystem::path& path) {
  const auto content = read_file(path);
  return decode_rgb({reinterpret_cast<const unsigned char*>(content.data()), content.size()});
}

void save_rgb(const std::filesystem::path& path, const cv::Mat& rgb) {
  if (rgb.type() != CV_8UC3) throw ChannelError("save_rgb expects an 8-bit RGB raster");
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), bgr)) throw Error("cannot write image " + path.string());
}

}  // namespace habitat
