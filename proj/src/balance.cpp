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

#include "habitat/balance.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <unordered_set>

#include <json.hpp>

#include "habitat/errors.hpp"
#include "habitat/fs_util.hpp"
#include "habitat/rng.hpp"

namespace habitat {

using nlohmann::json;

void BalanceConfig::validate() const {
  if (target_per_class < 1) throw ConfigError("target_per_class must be at least 1");
}

std::vector<ImageRecord> balance_class_counts(std::span<const ImageRecord> train_records,
                                              const BalanceConfig& config,
                                              std::span<const std::string> required_labels) {
  config.validate();
  if (train_records.empty()) throw ValidationError("balance: no training records");

  std::map<std::string, std::vector<const ImageRecord*>> by_class;
  for (const auto& label : required_labels) by_class[label];
  for (const auto& r : train_records) {
    if (r.origin != Origin::original)
      throw ValidationError("balance: input must contain original records only ('" + r.id + "')");
    by_class[r.label].push_back(&r);
  }

  std::vector<ImageRecord> out;
  out.reserve(by_class.size() * config.target_per_class);
  std::unordered_set<std::uint64_t> used_seeds;
  const std::size_t target = config.target_per_class;

  for (auto& [label, members] : by_class) {
    if (members.empty()) throw ValidationError("balance: class '" + label + "' has no training records");
    std::sort(members.begin(), members.end(), [](auto* a, auto* b) { return a->id < b->id; });
    Engine eng(mix_seed(config.seed, stable_hash(label)));

    if (members.size() >= target) {
      // Partial Fisher-Yates: the first `target` slots form the sample.
      std::vector<std::size_t> idx(members.size());
      std::iota(idx.begin(), idx.end(), 0);
      for (std::size_t i = 0; i < target; ++i) {
        const auto j = i + static_cast<std::size_t>(uniform_index(eng, idx.size() - i));
        std::swap(idx[i], idx[j]);
      }
      idx.resize(target);
      std::sort(idx.begin(), idx.end());
      for (auto i : idx) out.push_back(*members[i]);
      continue;
    }

    for (const auto* m : members) out.push_back(*m);
    const std::size_t n = members.size();
    for (std::size_t i = 0; i < target - n; ++i) {
      const ImageRecord& parent = *members[i % n];
      ImageRecord aug = parent;
      aug.id = parent.id + "#aug" + std::to_string(i / n + 1);
      aug.origin = Origin::augmented;
      aug.parent_id = parent.id;
      std::uint64_t seed = eng();
      while (!used_seeds.insert(seed).second) seed = eng();
      aug.augmentation_seed = seed;
      out.push_back(std::move(aug));
    }
  }
  return out;
}

std::string balanced_set_to_jsonl(std::span<const ImageRecord> records) {
  std::string out;
  for (const auto& r : records) {
    json j = {{"id", r.id}, {"label", r.label}, {"origin", to_string(r.origin)}, {"path", r.path.string()}};
    j["parent_id"] = r.parent_id ? json(*r.parent_id) : json(nullptr);
    j["augmentation_seed"] = r.augmentation_seed ? json(*r.augmentation_seed) : json(nullptr);
    out += j.dump() + "\n";
  }
  return out;
}

std::vector<ImageRecord> balanced_set_from_jsonl(std::string_view text) {
  std::vector<ImageRecord> out;
  const auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    try {
      const auto j = json::parse(lines[i]);
      ImageRecord r;
      r.id = j.at("id").get<std::string>();
      r.label = j.at("label").get<std::string>();
      r.origin = origin_from_string(j.at("origin").get<std::string>());
      r.path = j.value("path", std::string());
      if (!j.at("parent_id").is_null()) r.parent_id = j["parent_id"].get<std::string>();
      if (!j.at("augmentation_seed").is_null()) r.augmentation_seed = j["augmentation_seed"].get<std::uint64_t>();
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ParseError(std::string("balanced set: ") + e.what(), i + 1);
    }
  }
  return out;
}

}  // namespace habitat
