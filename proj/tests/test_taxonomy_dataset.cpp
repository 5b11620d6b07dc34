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

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include <doctest.h>

#include "habitat/dataset.hpp"
#include "habitat/errors.hpp"
#include "habitat/fs_util.hpp"
#include "habitat/taxonomy.hpp"
#include "support.hpp"

using namespace habitat;
using habitat::test::TempDir;

namespace {

// Image counts per class of the field-survey corpus, typed in from the
// published class table.
const std::map<std::string, std::size_t> kPublishedCounts = {
    {"AH", 2359},  {"BS", 957},   {"BSSP", 224},  {"BOG", 1750},      {"BRA", 2567},  {"BMYW", 3187},
    {"BUAG", 754}, {"CS", 1008},  {"CSD", 1546},  {"CW", 371},        {"DSH", 4699},  {"FMS", 2044},
    {"IG", 10555}, {"IR", 794},   {"Multiple", 1593}, {"SCR", 2053},  {"UG", 6172},   {"WAT", 459},
};

HabitatClass cls(std::string abbr) { return {abbr + " name", abbr, abbr + " definition", 0, std::nullopt}; }

ImageRecord rec(std::string id, std::string label) {
  ImageRecord r;
  r.id = std::move(id);
  r.path = r.id;
  r.label = std::move(label);
  return r;
}

Manifest single_class(std::size_t n) {
  std::vector<ImageRecord> rs;
  for (std::size_t i = 0; i < n; ++i) rs.push_back(rec("A/" + std::to_string(i), "A"));
  return Manifest(std::move(rs), "v");
}

}  // namespace

TEST_CASE("default taxonomy matches the published class table") {
  const auto& tax = ClassTaxonomy::living_england();
  CHECK(tax.size() == 18);
  CHECK(tax.contains("IG"));
  std::size_t total = 0;
  for (const auto& [abbr, n] : kPublishedCounts) {
    const auto idx = tax.find(abbr);
    REQUIRE_MESSAGE(idx.has_value(), abbr);
    CHECK(tax.at(*idx).reference_count == n);
    total += n;
  }
  CHECK(total == 43092);
}

TEST_CASE("canonical ordering is alphabetical and indices are a bijection") {
  const auto& tax = ClassTaxonomy::living_england();
  const std::vector<std::string> expected = {"AH",  "BMYW", "BOG", "BRA", "BS",       "BSSP", "BUAG", "CS",  "CSD",
                                             "CW",  "DSH",  "FMS", "IG",  "IR", "Multiple", "SCR",  "UG",  "WAT"};
  CHECK(tax.abbreviations() == expected);
  for (std::size_t i = 0; i < tax.size(); ++i) {
    CHECK(tax.at(i).index == i);
    CHECK(tax.index_of(tax.at(i).abbreviation) == i);
  }
  // Construction order does not matter.
  ClassTaxonomy a({cls("C"), cls("A"), cls("B")}, "x");
  ClassTaxonomy b({cls("B"), cls("C"), cls("A")}, "x");
  CHECK(a == b);
  CHECK(a.at(0).abbreviation == "A");
}

TEST_CASE("taxonomy validation") {
  ClassTaxonomy one({cls("A")}, "v");
  CHECK(one.size() == 1);
  CHECK(one.at(0).index == 0);

  CHECK_THROWS_AS(ClassTaxonomy({}, "v"), ValidationError);
  try {
    ClassTaxonomy({cls("X"), cls("X")}, "v");
    FAIL("duplicate accepted");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("'X'") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_taxonomy(R"({"classes": []})"), ValidationError);
  CHECK_THROWS_AS(parse_taxonomy("{not json"), ParseError);
  CHECK_THROWS_AS(parse_taxonomy(R"({"classes": [{"name": "n"}]})"), ParseError);
  CHECK_THROWS_AS(ClassTaxonomy::living_england().index_of("NOPE"), ValidationError);
}

TEST_CASE("taxonomy file round trip") {
  TempDir dir("tax");
  const auto& tax = ClassTaxonomy::living_england();
  write_file_atomic(dir / "t.json", taxonomy_to_json(tax));
  CHECK(load_taxonomy(dir / "t.json") == tax);
  CHECK(load_taxonomy_or_default("") == tax);

  const auto small = parse_taxonomy(R"({"classes": [{"name": "Beta", "abbreviation": "B", "definition": "b"},
                                                    {"name": "Alpha", "abbreviation": "A", "definition": "a"}]})");
  CHECK(small.size() == 2);
  CHECK(small.at(0).name == "Alpha");
  CHECK_FALSE(small.version().empty());
}

TEST_CASE("manifest counts and jsonl round trip") {
  std::vector<ImageRecord> rs = {rec("WAT/1.png", "WAT"), rec("WAT/2.png", "WAT"), rec("BS/1.png", "BS")};
  rs[0].site = "Loch, \"north\"";
  rs[0].location = GeoPoint{54.5, -3.25};
  rs[0].capture_date = parse_date("2021-06-30");
  Manifest m(rs, "v1");
  CHECK(m.per_class_counts().at("WAT") == 2);
  CHECK(m.per_class_counts().at("BS") == 1);
  CHECK(m.size() == 3);
  CHECK(manifest_from_jsonl(manifest_to_jsonl(m)) == m);

  CHECK_THROWS_AS(Manifest({rec("a", "WAT"), rec("a", "WAT")}, "v"), ValidationError);

  ImageRecord aug = rec("WAT/1.png#aug0", "WAT");
  aug.origin = Origin::augmented;
  CHECK_THROWS_AS(Manifest({aug}, "v").validate(ClassTaxonomy::living_england()), ValidationError);
  CHECK_THROWS_AS(Manifest({rec("x", "XYZ")}, "v").validate(ClassTaxonomy::living_england()), ValidationError);
}

TEST_CASE("manifest rejects tampered counts") {
  Manifest m({rec("WAT/1.png", "WAT")}, "v1");
  auto text = manifest_to_jsonl(m);
  const auto pos = text.find("\"WAT\":1");
  REQUIRE(pos != std::string::npos);
  text.replace(pos, 7, "\"WAT\":2");
  CHECK_THROWS_AS(manifest_from_jsonl(text), ValidationError);
}

TEST_CASE("ingest counts images per class directory") {
  TempDir dir("ingest");
  test::write_solid(dir / "WAT/a.png", 0, 0, 255);
  test::write_solid(dir / "WAT/b.png", 0, 0, 200);
  test::write_solid(dir / "BS/c.png", 200, 200, 100);
  write_file_atomic(dir / "BS/notes.txt", "not an image");
  const auto res = ingest_directory(dir.path(), ClassTaxonomy::living_england(), {});
  CHECK(res.manifest.size() == 3);
  CHECK(res.manifest.per_class_counts().at("WAT") == 2);
  CHECK(res.manifest.per_class_counts().at("BS") == 1);
  CHECK(res.manifest.find("WAT/a.png") != nullptr);

  // Unchanged directory, same manifest.
  CHECK(ingest_directory(dir.path(), ClassTaxonomy::living_england(), {}).manifest == res.manifest);
}

TEST_CASE("ingest skips a truncated image") {
  TempDir dir("trunc");
  for (int i = 0; i < 5; ++i) test::write_solid(dir / ("IG/" + std::to_string(i) + ".jpg"), 20, 160, 40, 32);
  // Cut the last file in half; the decoder must notice the missing end marker.
  const auto victim = dir / "IG/4.jpg";
  const auto bytes = read_file(victim);
  write_file_atomic(victim, std::string_view(bytes).substr(0, bytes.size() / 2));
  const auto res = ingest_directory(dir.path(), ClassTaxonomy::living_england(), {});
  CHECK(res.manifest.size() == 4);
  REQUIRE(res.skipped.size() == 1);
  CHECK(res.skipped[0].path.filename() == "4.jpg");
}

TEST_CASE("ingest errors") {
  TempDir dir("bad");
  test::write_solid(dir / "XYZ/a.png", 1, 2, 3);
  test::write_solid(dir / "WAT/a.png", 1, 2, 3);
  try {
    ingest_directory(dir.path(), ClassTaxonomy::living_england(), {});
    FAIL("unknown class accepted");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("XYZ") != std::string::npos);
  }
  TempDir empty("empty");
  std::filesystem::create_directories(empty / "WAT");
  CHECK_THROWS_AS(ingest_directory(empty.path(), ClassTaxonomy::living_england(), {}), ValidationError);
}

TEST_CASE("ingest reads the metadata sidecar") {
  TempDir dir("meta");
  test::write_solid(dir / "WAT/a.png", 0, 0, 255);
  write_file_atomic(dir / "metadata.csv", "filename,site,latitude,longitude,date\na.png,Ullswater,54.6,-2.9,2020-05-01\n");
  const auto res = ingest_directory(dir.path(), ClassTaxonomy::living_england(), {});
  const auto* r = res.manifest.find("WAT/a.png");
  REQUIRE(r != nullptr);
  CHECK(r->site == "Ullswater");
  REQUIRE(r->location.has_value());
  CHECK(r->location->latitude == doctest::Approx(54.6));
  CHECK(r->capture_date.has_value());
}

TEST_CASE("stratified split sizes") {
  for (const auto& [n, sizes] : std::vector<std::pair<std::size_t, std::multiset<std::size_t>>>{
           {10, {2, 2, 2, 2, 2}}, {11, {3, 2, 2, 2, 2}}}) {
    const auto m = single_class(n);
    const auto folds = stratified_kfold_split(m, 5, 42);
    std::multiset<std::size_t> got;
    for (int k = 0; k < 5; ++k) got.insert(folds.validation_ids(k).size());
    CHECK(got == sizes);
    CHECK(folds.assignment.size() == n);
  }
}

TEST_CASE("stratified split is deterministic and validates") {
  const auto m = single_class(23);
  CHECK(stratified_kfold_split(m, 5, 7) == stratified_kfold_split(m, 5, 7));
  CHECK(folds_from_json(folds_to_json(stratified_kfold_split(m, 5, 7))) == stratified_kfold_split(m, 5, 7));
  try {
    stratified_kfold_split(single_class(3), 5, 1);
    FAIL("too few records accepted");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("'A'") != std::string::npos);
  }

  const auto folds = stratified_kfold_split(m, 5, 7);
  const auto part = partition(m, folds, 2);
  CHECK(part.train.size() + part.validation.size() == m.size());
  for (const auto& r : part.validation) CHECK(folds.fold_of(r.id) == 2);
  CHECK_THROWS_AS(partition(m, folds, 5), ValidationError);
}
