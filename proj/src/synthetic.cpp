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

#include "habitat/synthetic.hpp"

#include <cstdio>

#include "habitat/errors.hpp"
#include "habitat/fs_util.hpp"
#include "habitat/image_io.hpp"
#include "habitat/rng.hpp"

namespace habitat {

ClassTaxonomy synthetic_color_taxonomy() {
  return ClassTaxonomy({{"Blue", "BLUE", "Uniformly blue test image.", 0, std::nullopt},
                        {"Red", "RED", "Uniformly red test image.", 0, std::nullopt}},
                       "synthetic-color-2");
}

std::size_t write_color_dataset(const std::filesystem::path& root, const SyntheticSpec& spec) {
  if (spec.per_class < 1 || spec.image_size < 1) throw ConfigError("synthetic dataset needs positive sizes");
  const ClassTaxonomy tax = synthetic_color_taxonomy();
  Engine eng(derive_seed(spec.seed, "synthetic"));
  std::size_t written = 0;
  for (const auto& cls : tax.classes()) {
    const bool red = cls.abbreviation == "RED";
    for (int i = 0; i < spec.per_class; ++i) {
      const auto main = static_cast<unsigned char>(200 + uniform_index(eng, 56));
      const auto off1 = static_cast<unsigned char>(uniform_index(eng, 41));
      const auto off2 = static_cast<unsigned char>(uniform_index(eng, 41));
      const cv::Vec3b rgb = red ? cv::Vec3b(main, off1, off2) : cv::Vec3b(off1, off2, main);
      cv::Mat img(spec.image_size, spec.image_size, CV_8UC3, cv::Scalar(rgb[0], rgb[1], rgb[2]));
      char name[64];
      std::snprintf(name, sizeof name, "%s_%03d.png", cls.abbreviation.c_str(), i);
      save_rgb(root / cls.abbreviation / name, img);
      ++written;
    }
  }
  write_file_atomic(root / "taxonomy.json", taxonomy_to_json(tax));
  return written;
}

}  // namespace habitat
