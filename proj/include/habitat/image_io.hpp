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

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include <opencv2/core.hpp>

namespace habitat {

enum class ImageFormat { jpeg, png };

std::string_view format_name(ImageFormat f);

/// Sniffs the container from magic bytes.
std::optional<ImageFormat> detect_format(std::span<const unsigned char> bytes);

/// True for .jpg/.jpeg/.png (case-insensitive).
bool has_image_extension(const std::filesystem::path& p);

/// Decodes to an 8-bit 3-channel RGB raster (CV_8UC3, RGB order).
/// Grayscale and alpha inputs are converted. Throws DecodeError for unknown
/// formats, truncated streams (missing JPEG EOI / PNG IEND) and decoder
/// failures; libjpeg happily returns partial rasters for cut-off files, so
/// the end-of-stream marker is checked explicitly.
cv::Mat decode_rgb(std::span<const unsigned char> bytes);
cv::Mat load_rgb(const std::filesystem::path& path);

/// Writes an RGB raster; the container follows the extension.
void save_rgb(const std::filesystem::path& path, const cv::Mat& rgb);

}  // namespace habitat
