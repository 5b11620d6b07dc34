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

#include <cstdint>
#include <filesystem>

#include "habitat/taxonomy.hpp"

namespace habitat {

/// Two-class colour dataset: constant red and constant blue images with a
/// small per-image shade offset. Used by the CLI `synth` command and tests.
struct SyntheticSpec {
  int per_class = 40;
  int image_size = 64;
  std::uint64_t seed = 0;
};

ClassTaxonomy synthetic_color_taxonomy();

/// Writes <root>/<abbreviation>/<abbreviation>_NNN.png plus taxonomy.json
/// and returns the number of images written.
std::size_t write_color_dataset(const std::filesystem::path& root, const SyntheticSpec& spec);

}  // namespace habitat
