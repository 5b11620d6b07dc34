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

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace habitat {

struct HabitatClass {
  std::string name;
  std::string abbreviation;
  std::string definition;
  std::size_t index = 0;
  /// Image count of the class in the reference field-survey corpus, if known.
  std::optional<std::size_t> reference_count;

  bool operator==(const HabitatClass&) const = default;
};

/// Ordered label space. Classes are sorted by abbreviation (byte order) at
/// construction and indexed 0..K-1 in that order; the ordering fixes the
/// meaning of every logit column and confusion-matrix row.
class ClassTaxonomy {
 public:
  static constexpr std::size_t kMaxClasses = 1000;

  /// Throws ValidationError on an empty list, more than kMaxClasses entries,
  /// an empty abbreviation, or a duplicate abbreviation.
  ClassTaxonomy(std::vector<HabitatClass> classes, std::string version);

  /// The 18-class Living England taxonomy.
  static const ClassTaxonomy& living_england();

  std::size_t size() const noexcept { return classes_.size(); }
  const std::string& version() const noexcept { return version_; }
  const std::vector<HabitatClass>& classes() const noexcept { return classes_; }
  const HabitatClass& at(std::size_t index) const { return classes_.at(index); }

  std::optional<std::size_t> find(std::string_view abbreviation) const;
  bool contains(std::string_view abbreviation) const { return find(abbreviation).has_value(); }
  /// Throws ValidationError naming the label when it is not in the taxonomy.
  std::size_t index_of(std::string_view abbreviation) const;
  std::vector<std::string> abbreviations() const;

  bool operator==(const ClassTaxonomy&) const = default;

 private:
  std::vector<HabitatClass> classes_;
  std::string version_;
};

/// Parses a taxonomy document:
///   {"version": "...", "classes": [{"name", "abbreviation", "definition"}, ...]}
/// `version` is optional; when absent one is derived from the content.
ClassTaxonomy parse_taxonomy(std::string_view json_text);
ClassTaxonomy load_taxonomy(const std::filesystem::path& source);
/// Empty path selects the embedded default.
ClassTaxonomy load_taxonomy_or_default(const std::filesystem::path& source);
std::string taxonomy_to_json(const ClassTaxonomy& taxonomy);

}  // namespace habitat
