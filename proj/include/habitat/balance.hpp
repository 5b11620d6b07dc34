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
#include <span>
#include <string>
#include <vector>

#include "habitat/dataset.hpp"

namespace habitat {

struct BalanceConfig {
  std::size_t target_per_class = 1000;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Equalises per-class counts to exactly `target_per_class`.
///
/// Classes above the target are reduced to a uniform random subset drawn
/// without replacement. Classes below it keep every original and gain
/// augmented records: the i-th synthetic record takes the i-th original (by
/// id, cycling) as its parent and carries its own augmentation seed, so the
/// image is materialised on load rather than stored. The output is ordered
/// by label, then originals by id, then augmented records, and depends only
/// on the set of input records and `config.seed`.
///
/// Input must contain originals only; throws ValidationError otherwise, on
/// empty input, or when `required_labels` names a class with no records.
std::vector<ImageRecord> balance_class_counts(std::span<const ImageRecord> train_records,
                                              const BalanceConfig& config,
                                              std::span<const std::string> required_labels = {});

/// Balanced-set description: one JSON line per record with id, label,
/// origin, parent_id and augmentation seed.
std::string balanced_set_to_jsonl(std::span<const ImageRecord> records);
std::vector<ImageRecord> balanced_set_from_jsonl(std::string_view text);

}  // namespace habitat
