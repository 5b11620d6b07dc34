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

#include "habitat/taxonomy.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include <json.hpp>

#include "habitat/errors.hpp"
#include "habitat/fs_util.hpp"
#include "habitat/rng.hpp"

namespace habitat {

namespace {

struct Entry {
  const char* name;
  const char* abbreviation;
  const char* definition;
  std::size_t count;
};

// Living England broad habitat classes with their field-photo counts.
constexpr Entry kLivingEngland[] = {
    {"Arable and Horticultural", "AH",
     "Cultivated land under crops, including ploughed fields, leys and horticultural plots.", 2359},
    {"Bare Sand", "BS", "Unvegetated or sparsely vegetated sand, typically on beaches and mobile dunes.",
     957},
    {"Bare Soil, Silt and Peat", "BSSP",
     "Exposed soil, intertidal silt or mud, and bare or eroding peat with little plant cover.", 224},
    {"Bog", "BOG",
     "Peat-forming wetland dominated by Sphagnum mosses, cotton-grasses and other acid-tolerant plants.",
     1750},
    {"Bracken", "BRA", "Ground dominated by dense stands of bracken fern (Pteridium aquilinum).", 2567},
    {"Broadleaved, Mixed and Yew Woodland", "BMYW",
     "Woodland dominated by broadleaved trees or yew, including stands mixed with conifers.", 3187},
    {"Built up areas and Gardens", "BUAG",
     "Urban and rural development: buildings, hard surfaces and their associated gardens.", 754},
    {"Coastal Saltmarsh", "CS",
     "Salt-tolerant vegetation on intertidal mud and silt that is periodically flooded by the tide.",
     1008},
    {"Coastal Sand Dunes", "CSD",
     "Wind-blown coastal sand systems with marram grass, dune grassland and dune slacks.", 1546},
    {"Coniferous Woodland", "CW",
     "Woodland dominated by coniferous trees, including plantations and native pinewood.", 371},
    {"Dwarf Shrub Heath", "DSH",
     "Vegetation dominated by heathers, dwarf gorse or bilberry on acidic, nutrient-poor soils.", 4699},
    {"Fen, marsh and swamp", "FMS",
     "Wetland on mineral or peaty soils fed by ground or surface water, with reeds, sedges and rushes.",
     2044},
    {"Improved and Semi-Improved Grassland", "IG",
     "Agriculturally managed grassland with species-poor swards, often fertilised or reseeded.", 10555},
    {"Inland rock", "IR",
     "Natural and artificial rock exposures inland, including cliffs, scree, pavement and quarries.", 794},
    {"Multiple", "Multiple",
     "Scenes containing more than one habitat type, such as ecotones and transitional mosaics.", 1593},
    {"Scrub", "SCR",
     "Shrub-dominated vegetation such as hawthorn, blackthorn or willow, below woodland height.", 2053},
    {"Unimproved grassland", "UG",
     "Semi-natural, species-rich grassland on acid, neutral or calcareous soils.", 6172},
    {"Water", "WAT", "Open standing or running fresh water and coastal water bodies.", 459},
};

std::string derived_version(const std::vector<HabitatClass>& classes) {
  std::uint64_t h = stable_hash("taxonomy");
  for (const auto& c : classes) {
    h = mix_seed(h, stable_hash(c.abbreviation));
    h = mix_seed(h, stable_hash(c.name));
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "custom-%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

ClassTaxonomy::ClassTaxonomy(std::vector<HabitatClass> classes, std::string version)
    : classes_(std::move(classes)), version_(std::move(version)) {
  if (classes_.empty()) throw ValidationError("taxonomy has no classes");
  if (classes_.size() > kMaxClasses)
    throw ValidationError("taxonomy has " + std::to_string(classes_.size()) + " classes (max " +
                          std::to_string(kMaxClasses) + ")");
  std::set<std::string> seen;
  for (const auto& c : classes_) {
    if (c.abbreviation.empty()) throw ValidationError("taxonomy class '" + c.name + "' has no abbreviation");
    if (!seen.insert(c.abbreviation).second)
      throw ValidationError("duplicate class abbreviation '" + c.abbreviation + "'");
  }
  std::sort(classes_.begin(), classes_.end(),
            [](const HabitatClass& a, const HabitatClass& b) { return a.abbreviation < b.abbreviation; });
  for (std::size_t i = 0; i < classes_.size(); ++i) classes_[i].index = i;
  if (version_.empty()) version_ = derived_version(classes_);
}

const ClassTaxonomy& ClassTaxonomy::living_england() {
  static const ClassTaxonomy taxonomy = [] {
    std::vector<HabitatClass> classes;
    for (const auto& e : kLivingEngland) {
      classes.push_back({e.name, e.abbreviation, e.definition, 0, e.count});
    }
    return ClassTaxonomy(std::move(classes), "living-england-18");
  }();
  return taxonomy;
}

std::optional<std::size_t> ClassTaxonomy::find(std::string_view abbreviation) const {
  auto it = std::lower_bound(classes_.begin(), classes_.end(), abbreviation,
                             [](const HabitatClass& c, std::string_view a) { return c.abbreviation < a; });
  if (it == classes_.end() || it->abbreviation != abbreviation) return std::nullopt;
  return it->index;
}

std::size_t ClassTaxonomy::index_of(std::string_view abbreviation) const {
  if (auto i = find(abbreviation)) return *i;
  throw ValidationError("label '" + std::string(abbreviation) + "' is not in taxonomy " + version_);
}

std::vector<std::string> ClassTaxonomy::abbreviations() const {
  std::vector<std::string> out;
  out.reserve(classes_.size());
  for (const auto& c : classes_) out.push_back(c.abbreviation);
  return out;
}

ClassTaxonomy parse_taxonomy(std::string_view json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("taxonomy: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("classes") || !doc["classes"].is_array())
    throw ParseError("taxonomy: expected an object with a 'classes' array");
  std::vector<HabitatClass> classes;
  for (const auto& item : doc["classes"]) {
    if (!item.is_object() || !item.contains("abbreviation") || !item["abbreviation"].is_string())
      throw ParseError("taxonomy: every class needs a string 'abbreviation'");
    HabitatClass c;
    c.abbreviation = item["abbreviation"].get<std::string>();
    c.name = item.value("name", c.abbreviation);
    c.definition = item.value("definition", std::string());
    if (item.contains("reference_count") && item["reference_count"].is_number_unsigned())
      c.reference_count = item["reference_count"].get<std::size_t>();
    classes.push_back(std::move(c));
  }
  return ClassTaxonomy(std::move(classes), doc.value("version", std::string()));
}

ClassTaxonomy load_taxonomy(const std::filesystem::path& source) {
  return parse_taxonomy(read_file(source));
}

ClassTaxonomy load_taxonomy_or_default(const std::filesystem::path& source) {
  return source.empty() ? ClassTaxonomy::living_england() : load_taxonomy(source);
}

std::string taxonomy_to_json(const ClassTaxonomy& taxonomy) {
  nlohmann::json doc;
  doc["version"] = taxonomy.version();
  doc["classes"] = nlohmann::json::array();
  for (const auto& c : taxonomy.classes()) {
    nlohmann::json item = {{"name", c.name}, {"abbreviation", c.abbreviation}, {"definition", c.definition}};
    if (c.reference_count) item["reference_count"] = *c.reference_count;
    doc["classes"].push_back(std::move(item));
  }
  return doc.dump(2) + "\n";
}

}  // namespace habitat
