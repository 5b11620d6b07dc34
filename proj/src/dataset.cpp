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

#include "habitat/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdio>
#include <mutex>
#include <set>
#include <thread>
#include <unordered_map>

#include <json.hpp>

#include "habitat/csv.hpp"
#include "habitat/errors.hpp"
#include "habitat/fs_util.hpp"
#include "habitat/image_io.hpp"
#include "habitat/rng.hpp"

namespace habitat {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Origin o) {
  return o == Origin::original ? "original" : "augmented";
}

Origin origin_from_string(std::string_view s) {
  if (s == "original") return Origin::original;
  if (s == "augmented") return Origin::augmented;
  throw ParseError("unknown origin '" + std::string(s) + "'");
}

std::string format_date(const std::chrono::year_month_day& d) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", static_cast<int>(d.year()),
                static_cast<unsigned>(d.month()), static_cast<unsigned>(d.day()));
  return buf;
}

std::chrono::year_month_day parse_date(std::string_view iso) {
  int y = 0;
  unsigned m = 0, d = 0;
  auto bad = [&] { return ParseError("invalid date '" + std::string(iso) + "' (expected YYYY-MM-DD)"); };
  if (iso.size() != 10 || iso[4] != '-' || iso[7] != '-') throw bad();
  auto parse = [&](std::string_view s, auto& out) {
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (ec != std::errc() || p != s.data() + s.size()) throw bad();
  };
  parse(iso.substr(0, 4), y);
  parse(iso.substr(5, 2), m);
  parse(iso.substr(8, 2), d);
  std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!ymd.ok()) throw bad();
  return ymd;
}

// ---------------------------------------------------------------------------
// Manifest

Manifest::Manifest(std::vector<ImageRecord> records, std::string taxonomy_version)
    : records_(std::move(records)), taxonomy_version_(std::move(taxonomy_version)) {
  std::sort(records_.begin(), records_.end(),
            [](const ImageRecord& a, const ImageRecord& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < records_.size(); ++i) {
    if (records_[i].id == records_[i - 1].id)
      throw ValidationError("duplicate record id '" + records_[i].id + "'");
  }
  for (const auto& r : records_) ++counts_[r.label];
}

const ImageRecord* Manifest::find(std::string_view id) const {
  auto it = std::lower_bound(records_.begin(), records_.end(), id,
                             [](const ImageRecord& r, std::string_view key) { return r.id < key; });
  return it != records_.end() && it->id == id ? &*it : nullptr;
}

void Manifest::validate(const ClassTaxonomy& taxonomy) const {
  for (const auto& r : records_) {
    if (!taxonomy.contains(r.label))
      throw ValidationError("record '" + r.id + "' has label '" + r.label + "' not in taxonomy " +
                            taxonomy.version());
    if (r.origin == Origin::augmented) {
      if (!r.parent_id) throw ValidationError("augmented record '" + r.id + "' has no parent_id");
      const auto* parent = find(*r.parent_id);
      if (parent && parent->origin != Origin::original)
        throw ValidationError("augmented record '" + r.id + "' has a non-original parent");
    }
  }
}

namespace {

json record_to_json(const ImageRecord& r) {
  json j = {{"id", r.id}, {"path", r.path.string()}, {"label", r.label}, {"origin", to_string(r.origin)}};
  if (r.site) j["site"] = *r.site;
  if (r.location) {
    j["latitude"] = r.location->latitude;
    j["longitude"] = r.location->longitude;
  }
  if (r.capture_date) j["capture_date"] = format_date(*r.capture_date);
  if (r.parent_id) j["parent_id"] = *r.parent_id;
  if (r.augmentation_seed) j["augmentation_seed"] = *r.augmentation_seed;
  return j;
}

ImageRecord record_from_json(const json& j) {
  ImageRecord r;
  r.id = j.at("id").get<std::string>();
  r.path = j.at("path").get<std::string>();
  r.label = j.at("label").get<std::string>();
  r.origin = origin_from_string(j.value("origin", std::string("original")));
  if (j.contains("site")) r.site = j["site"].get<std::string>();
  if (j.contains("latitude") || j.contains("longitude"))
    r.location = GeoPoint{j.at("latitude").get<double>(), j.at("longitude").get<double>()};
  if (j.contains("capture_date")) r.capture_date = parse_date(j["capture_date"].get<std::string>());
  if (j.contains("parent_id")) r.parent_id = j["parent_id"].get<std::string>();
  if (j.contains("augmentation_seed")) r.augmentation_seed = j["augmentation_seed"].get<std::uint64_t>();
  return r;
}

}  // namespace

std::string manifest_to_jsonl(const Manifest& manifest) {
  json header = {{"type", "manifest"},
                 {"taxonomy_version", manifest.taxonomy_version()},
                 {"record_count", manifest.size()},
                 {"per_class_counts", manifest.per_class_counts()}};
  std::string out = header.dump() + "\n";
  for (const auto& r : manifest.records()) out += record_to_json(r).dump() + "\n";
  return out;
}

Manifest manifest_from_jsonl(std::string_view text) {
  const auto lines = split_lines(text);
  if (lines.empty()) throw ParseError("manifest: empty file");
  json header;
  try {
    header = json::parse(lines[0]);
  } catch (const json::exception& e) {
    throw ParseError(std::string("manifest header: ") + e.what(), 1);
  }
  if (!header.is_object() || header.value("type", "") != "manifest")
    throw ParseError("manifest: first line must be the manifest header", 1);

  std::vector<ImageRecord> records;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    try {
      records.push_back(record_from_json(json::parse(lines[i])));
    } catch (const json::exception& e) {
      throw ParseError(std::string("manifest record: ") + e.what(), i + 1);
    } catch (const ParseError& e) {
      throw ParseError(e.what(), i + 1);
    }
  }
  Manifest manifest(std::move(records), header.value("taxonomy_version", std::string()));
  const auto declared = header.value("per_class_counts", std::map<std::string, std::size_t>{});
  if (declared != manifest.per_class_counts() ||
      header.value("record_count", manifest.size()) != manifest.size())
    throw ValidationError("manifest: declared per-class counts disagree with the records");
  return manifest;
}

void save_manifest(const fs::path& path, const Manifest& manifest) {
  write_file_atomic(path, manifest_to_jsonl(manifest));
}

Manifest load_manifest(const fs::path& path) {
  return manifest_from_jsonl(read_file(path));
}

// ---------------------------------------------------------------------------
// Ingestion

namespace {

struct SidecarRow {
  std::optional<std::string> site;
  std::optional<GeoPoint> location;
  std::optional<std::chrono::year_month_day> date;
};

std::unordered_map<std::string, SidecarRow> read_sidecar(const fs::path& file) {
  std::unordered_map<std::string, SidecarRow> rows;
  if (!fs::exists(file)) return rows;
  const auto lines = split_lines(read_file(file));
  if (lines.empty()) return rows;
  const auto header = csv::parse_line(lines[0], 1);
  auto column = [&](std::string_view name) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    return std::nullopt;
  };
  const auto c_file = column("filename");
  if (!c_file) throw ParseError("metadata sidecar needs a 'filename' column", 1);
  const auto c_site = column("site"), c_lat = column("latitude"), c_lon = column("longitude"),
             c_date = column("date");
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto f = csv::parse_line(lines[i], i + 1);
    auto get = [&](std::optional<std::size_t> c) -> std::string {
      return c && *c < f.size() ? f[*c] : std::string();
    };
    SidecarRow row;
    if (auto s = get(c_site); !s.empty()) row.site = s;
    const auto lat = get(c_lat), lon = get(c_lon);
    if (!lat.empty() && !lon.empty()) {
      try {
        row.location = GeoPoint{std::stod(lat), std::stod(lon)};
      } catch (const std::exception&) {
        throw ParseError("metadata sidecar: bad coordinates", i + 1);
      }
    }
    if (auto d = get(c_date); !d.empty()) {
      try {
        row.date = parse_date(d);
      } catch (const ParseError& e) {
        throw ParseError(e.what(), i + 1);
      }
    }
    rows[get(c_file)] = row;
  }
  return rows;
}

}  // namespace

IngestResult ingest_directory(const fs::path& root_in, const ClassTaxonomy& taxonomy,
                              const IngestOptions& options) {
  if (!fs::is_directory(root_in)) throw ValidationError("ingest root is not a directory: " + root_in.string());
  const fs::path root = fs::absolute(root_in);

  std::vector<std::string> unknown;
  std::vector<std::pair<std::string, fs::path>> candidates;  // (label, file)
  std::vector<SkippedFile> skipped;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (!entry.is_directory()) continue;
    const auto name = entry.path().filename().string();
    if (name.starts_with('.')) continue;
    if (!taxonomy.contains(name)) {
      unknown.push_back(name);
      continue;
    }
    for (const auto& f : fs::recursive_directory_iterator(entry.path())) {
      if (!f.is_regular_file() || f.path().filename().string().starts_with('.')) continue;
      if (!has_image_extension(f.path())) {
        skipped.push_back({f.path(), "not a .jpg/.jpeg/.png file"});
        continue;
      }
      candidates.emplace_back(name, f.path());
    }
  }
  if (!unknown.empty()) {
    std::sort(unknown.begin(), unknown.end());
    std::string list;
    for (const auto& u : unknown) list += (list.empty() ? "" : ", ") + u;
    throw ValidationError("class directories not in taxonomy " + taxonomy.version() + ": " + list);
  }

  // Full decode of every candidate; this is the slow part, so fan it out.
  std::vector<std::optional<std::string>> failure(candidates.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < candidates.size(); i = next++) {
      try {
        load_rgb(candidates[i].second);
      } catch (const std::exception& e) {
        failure[i] = e.what();
      }
    }
  };
  unsigned threads = options.threads ? options.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, std::max<std::size_t>(1, candidates.size()));
  {
    std::vector<std::jthread> pool;
    for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
  }

  const auto sidecar = read_sidecar(root / options.metadata_file);
  std::vector<ImageRecord> records;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& [label, file] = candidates[i];
    if (failure[i]) {
      skipped.push_back({file, *failure[i]});
      continue;
    }
    ImageRecord r;
    r.id = fs::relative(file, root).generic_string();
    r.path = file;
    r.label = label;
    auto meta = sidecar.find(r.id);
    if (meta == sidecar.end()) meta = sidecar.find(file.filename().string());
    if (meta != sidecar.end()) {
      r.site = meta->second.site;
      r.location = meta->second.location;
      r.capture_date = meta->second.date;
    }
    records.push_back(std::move(r));
  }
  if (records.empty()) throw ValidationError("no readable images under " + root.string());
  std::sort(skipped.begin(), skipped.end(),
            [](const SkippedFile& a, const SkippedFile& b) { return a.path < b.path; });
  return {Manifest(std::move(records), taxonomy.version()), std::move(skipped)};
}

// ---------------------------------------------------------------------------
// Folds

int FoldAssignment::fold_of(std::string_view id) const {
  auto it = assignment.find(std::string(id));
  if (it == assignment.end()) throw ValidationError("record '" + std::string(id) + "' has no fold");
  return it->second;
}

std::vector<std::string> FoldAssignment::validation_ids(int fold) const {
  std::vector<std::string> ids;
  for (const auto& [id, f] : assignment)
    if (f == fold) ids.push_back(id);
  return ids;
}

FoldAssignment stratified_kfold_split(const Manifest& manifest, int n_folds, std::uint64_t seed) {
  if (n_folds < 1) throw ValidationError("n_folds must be positive");
  std::map<std::string, std::vector<std::string>> by_class;
  for (const auto& r : manifest.records())
    if (r.origin == Origin::original) by_class[r.label].push_back(r.id);

  FoldAssignment out;
  out.n_folds = n_folds;
  out.seed = seed;
  // Rotating the starting fold per class spreads the remainders, keeping
  // total fold sizes balanced as well.
  std::size_t offset = 0;
  for (auto& [label, ids] : by_class) {
    if (ids.size() < static_cast<std::size_t>(n_folds))
      throw ValidationError("class '" + label + "' has " + std::to_string(ids.size()) +
                            " original images, fewer than n_folds=" + std::to_string(n_folds));
    Engine eng(mix_seed(seed, stable_hash(label)));
    shuffle(ids, eng);  // ids arrive sorted, so the result depends only on seed
    for (std::size_t i = 0; i < ids.size(); ++i)
      out.assignment[ids[i]] = static_cast<int>((offset + i) % n_folds);
    offset = (offset + ids.size()) % n_folds;
  }
  return out;
}

std::string folds_to_json(const FoldAssignment& folds) {
  json j = {{"n_folds", folds.n_folds}, {"seed", folds.seed}, {"assignment", folds.assignment}};
  return j.dump(1) + "\n";
}

FoldAssignment folds_from_json(std::string_view text) {
  try {
    const auto j = json::parse(text);
    FoldAssignment f;
    f.n_folds = j.at("n_folds").get<int>();
    f.seed = j.at("seed").get<std::uint64_t>();
    f.assignment = j.at("assignment").get<std::map<std::string, int>>();
    if (f.n_folds < 1) throw ValidationError("fold file: n_folds must be positive");
    for (const auto& [id, k] : f.assignment)
      if (k < 0 || k >= f.n_folds) throw ValidationError("fold file: fold index out of range for '" + id + "'");
    return f;
  } catch (const json::exception& e) {
    throw ParseError(std::string("fold file: ") + e.what());
  }
}

void save_folds(const fs::path& path, const FoldAssignment& folds) {
  write_file_atomic(path, folds_to_json(folds));
}

FoldAssignment load_folds(const fs::path& path) {
  return folds_from_json(read_file(path));
}

FoldPartition partition(const Manifest& manifest, const FoldAssignment& folds, int fold) {
  if (fold < 0 || fold >= folds.n_folds)
    throw ValidationError("fold index " + std::to_string(fold) + " out of range for " +
                          std::to_string(folds.n_folds) + " folds");
  FoldPartition p;
  for (const auto& r : manifest.records()) {
    if (r.origin != Origin::original) continue;
    (folds.fold_of(r.id) == fold ? p.validation : p.train).push_back(r);
  }
  return p;
}

}  // namespace habitat
