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
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "habitat/model.hpp"
#include "habitat/taxonomy.hpp"

namespace habitat {

/// Weight container shared by checkpoints and pretrained backbone files:
///   "HABWGT01" | u64 header length | header JSON | u32 crc32(header) | payload
/// The header lists every tensor (name, shape, byte offset) plus a crc32 of
/// the float32 little-endian payload and a free-form "meta" object.
struct TensorFile {
  nlohmann::json meta = nlohmann::json::object();
  StateDict tensors;
};

void write_tensor_file(const std::filesystem::path& path, const TensorFile& file);
/// Throws IntegrityError on a bad magic, truncation or checksum mismatch.
TensorFile read_tensor_file(const std::filesystem::path& path);

struct CheckpointMetadata {
  ClassifierConfig config;
  std::string taxonomy_version;
  std::vector<std::string> class_labels;
  int epoch = 0;
  double val_accuracy = 0.0;
  std::string model_version;
};

nlohmann::json config_to_json(const ClassifierConfig& c);
ClassifierConfig config_from_json(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& path, const Classifier& model, CheckpointMetadata meta);

struct LoadedCheckpoint {
  std::unique_ptr<Classifier> model;
  CheckpointMetadata meta;
};

/// Rebuilds the classifier from the stored config (no pretrained fetch) and
/// loads its weights. With `expected`, the stored taxonomy version and class
/// count must match, else CompatibilityError.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const ClassTaxonomy* expected = nullptr);

}  // namespace habitat
