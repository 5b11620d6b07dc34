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

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "habitat/taxonomy.hpp"

namespace habitat {

enum class Origin { original, augmented };

std::string_view to_string(Origin o);
Origin origin_from_string(std::string_view s);

struct GeoPoint {
  double latitude = 0.0;
  double longitude = 0.0;
  bool operator==(const GeoPoint&) const = default;
};

struct ImageRecord {
  std::string id;
  std::filesystem::path path;
  std::string label;
  std::optional<std::string> site;
  std::optional<GeoPoint> location;
  std::optional<std::chrono::year_month_day> capture_date;
  Origin origin = Origin::original;
  /// Source record of an augmented copy.
  std::optional<std::string> parent_id;
  /// Seed of the stochastic transform that materializes an augmented copy.
  std::optional<std::uint64_t> augmentation_seed;

  bool operator==(const ImageRecord&) const = default;
};

/// Dataset index. Records are kept sorted by id; per-class counts are
/// always a recount of the records.
class Manifest {
 public:
  Manifest() = default;
  Manifest(std::vector<ImageRecord> records, std::string taxonomy_version);

  const std::vector<ImageRecord>& records() const noexcept { return records_; }
  const std::string& taxonomy_version() const noexcept { return taxonomy_version_; }
  const std::map<std::string, std::size_t>& per_class_counts() const noexcept { return counts_; }
  std::size_t size() const noexcept { return records_.size(); }
  const ImageRecord* find(std::string_view id) const;

  /// Checks labels against the taxonomy and the augmented-record invariant.
  void validate(const ClassTaxonomy& taxonomy) const;

  bool operator==(const Manifest&) const = default;

 private:
  std::vector<ImageRecord> records_;
  std::string taxonomy_version_;
  std::map<std::string, std::size_t> counts_;
};

std::string manifest_to_jsonl(const Manifest& manifest);
/// Verifies the header counts against a recount.
Manifest manifest_from_jsonl(std::string_view text);
void save_manifest(const std::filesystem::path& path, const Manifest& manifest);
Manifest load_manifest(const std::filesystem::path& path);

struct SkippedFile {
  std::filesystem::path path;
  std::string reason;
};

struct IngestResult {
  Manifest manifest;
  std::vector<SkippedFile> skipped;
};

struct IngestOptions {
  /// Sidecar table inside the root: filename,site,latitude,longitude,date.
  /// `filename` may be the record id (CLASS/name.jpg) or the bare file name.
  std::string metadata_file = "metadata.csv";
  unsigned threads = 0;  ///< 0 = hardware concurrency
};

/// Scans root/<ABBREVIATION>/... for images. Every file is fully decoded;
/// unreadable ones go to the skip report instead of the manifest.
IngestResult ingest_directory(const std::filesystem::path& root, const ClassTaxonomy& taxonomy,
                              const IngestOptions& options = {});

struct FoldAssignment {
  int n_folds = 0;
  std::uint64_t seed = 0;
  std::map<std::string, int> assignment;

  int fold_of(std::string_view id) const;
  std::vector<std::string> validation_ids(int fold) const;
  bool operator==(const FoldAssignment&) const = default;
};

/// Per-class stratified k-fold split. Within a class, records are shuffled
/// by a class-specific stream of `seed` and dealt round-robin, so per-class
/// fold sizes differ by at most one. Augmented records are ignored.
FoldAssignment stratified_kfold_split(const Manifest& manifest, int n_folds, std::uint64_t seed);

std::string folds_to_json(const FoldAssignment& folds);
FoldAssignment folds_from_json(std::string_view text);
void save_folds(const std::filesystem::path& path, const FoldAssignment& folds);
FoldAssignment load_folds(const std::filesystem::path& path);

struct FoldPartition {
  std::vector<ImageRecord> train;
  std::vector<ImageRecord> validation;
};

/// Original records split by fold; throws if a record has no fold.
FoldPartition partition(const Manifest& manifest, const FoldAssignment& folds, int fold);

std::string format_date(const std::chrono::year_month_day& d);
std::chrono::year_month_day parse_date(std::string_view iso);

}  // namespace habitat
