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

// Shared helpers for the unit and acceptance tests: scratch directories,
// seeded generators and small image fixtures.

#include <atomic>
#include <cmath>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "habitat/image_io.hpp"
#include "habitat/rng.hpp"

namespace habitat::test {

namespace fs = std::filesystem;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = fs::temp_directory_path() /
            ("habitat_" + tag + "_" + std::to_string(stamp) + "_" + std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const noexcept { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

/// Seeded draws for property tests. Built on the portable helpers so a
/// failing case can be replayed from its seed on any platform.
class Gen {
 public:
  explicit Gen(std::uint64_t seed) : eng_(seed) {}
  /// Integer in [lo, hi].
  std::int64_t integer(std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(uniform_index(eng_, static_cast<std::uint64_t>(hi - lo + 1)));
  }
  double real(double lo, double hi) { return uniform(eng_, lo, hi); }
  bool coin(double p = 0.5) { return uniform01(eng_) < p; }
  /// Random probability vector of length k (positive entries summing to 1).
  std::vector<double> simplex(std::size_t k) {
    std::vector<double> v(k);
    double sum = 0.0;
    for (auto& x : v) {
      x = -std::log(1.0 - uniform01(eng_));
      sum += x;
    }
    for (auto& x : v) x /= sum;
    return v;
  }
  Engine& engine() noexcept { return eng_; }

 private:
  Engine eng_;
};

/// Constant-colour RGB raster.
inline cv::Mat solid(int rows, int cols, unsigned char r, unsigned char g, unsigned char b) {
  return cv::Mat(rows, cols, CV_8UC3, cv::Scalar(r, g, b));
}

inline void write_solid(const fs::path& path, unsigned char r, unsigned char g, unsigned char b,
                            int size = 16) {
  fs::create_directories(path.parent_path());
  save_rgb(path, solid(size, size, r, g, b));
}

}  // namespace habitat::test
