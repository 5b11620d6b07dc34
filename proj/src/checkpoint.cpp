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

#include "habitat/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <zlib.h>

#include "habitat/errors.hpp"
#include "habitat/fs_util.hpp"

namespace habitat {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "weight files store little-endian float32");

namespace {

constexpr char kMagic[8] = {'H', 'A', 'B', 'W', 'G', 'T', '0', '1'};

std::uint32_t crc(const void* data, std::size_t n) {
  uLong c = crc32(0L, Z_NULL, 0);
  const auto* p = static_cast<const Bytef*>(data);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    c = crc32(c, p, chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(c);
}

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get(const std::string& in, std::size_t pos) {
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  return v;
}

std::string payload_of(const StateDict& tensors, json& index) {
  std::string payload;
  index = json::array();
  for (const auto& [name, t] : tensors) {
    index.push_back({{"name", name}, {"shape", t.shape()}, {"offset", payload.size()}});
    payload.append(reinterpret_cast<const char*>(t.data()), static_cast<std::size_t>(t.numel()) * sizeof(float));
  }
  return payload;
}

}  // namespace

void write_tensor_file(const std::filesystem::path& path, const TensorFile& file) {
  json index;
  const std::string payload = payload_of(file.tensors, index);
  const json header = {{"format", 1},
                       {"meta", file.meta},
                       {"tensors", index},
                       {"payload_bytes", payload.size()},
                       {"payload_crc32", crc(payload.data(), payload.size())}};
  const std::string h = header.dump();
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint64_t>(out, h.size());
  out += h;
  put<std::uint32_t>(out, crc(h.data(), h.size()));
  out += payload;
  write_file_atomic(path, out);
}

TensorFile read_tensor_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error("weight file not found: " + path.string());
  const std::string data = read_file(path);
  const auto fail = [&](const std::string& why) { return IntegrityError(path.string() + ": " + why); };
  if (data.size() < sizeof(kMagic) + 8 || std::memcmp(data.data(), kMagic, sizeof(kMagic)) != 0)
    throw fail("not a weight file (bad magic)");
  const auto hlen = get<std::uint64_t>(data, 8);
  if (hlen > data.size() - 16 || data.size() - 16 - hlen < 4) throw fail("truncated header");
  const std::string h = data.substr(16, hlen);
  if (get<std::uint32_t>(data, 16 + hlen) != crc(h.data(), h.size())) throw fail("header checksum mismatch");
  const std::size_t payload_pos = 16 + hlen + 4;
  TensorFile out;
  try {
    const json header = json::parse(h);
    const auto payload_bytes = header.at("payload_bytes").get<std::size_t>();
    if (data.size() - payload_pos != payload_bytes) throw fail("payload size mismatch (truncated or padded)");
    if (crc(data.data() + payload_pos, payload_bytes) != header.at("payload_crc32").get<std::uint32_t>())
      throw fail("payload checksum mismatch");
    out.meta = header.at("meta");
    for (const auto& e : header.at("tensors")) {
      const auto shape = e.at("shape").get<nn::Shape>();
      const auto offset = e.at("offset").get<std::size_t>();
      const auto n = static_cast<std::size_t>(nn::shape_numel(shape));
      if (offset > payload_bytes || n * sizeof(float) > payload_bytes - offset)
        throw fail("tensor '" + e.at("name").get<std::string>() + "' exceeds the payload");
      std::vector<float> values(n);
      std::memcpy(values.data(), data.data() + payload_pos + offset, n * sizeof(float));
      out.tensors.emplace(e.at("name").get<std::string>(), nn::Tensor(shape, std::move(values)));
    }
  } catch (const json::exception& e) {
    throw fail(std::string("malformed header: ") + e.what());
  }
  return out;
}

json config_to_json(const ClassifierConfig& c) {
  return {{"n_classes", c.n_classes},
          {"dropout_rate", c.dropout_rate},
          {"backbone", c.backbone},
          {"pretrained", c.pretrained},
          {"input_size", c.input_size}};
}

ClassifierConfig config_from_json(const json& j) {
  ClassifierConfig c;
  c.n_classes = j.value("n_classes", c.n_classes);
  c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
  c.backbone = j.value("backbone", c.backbone);
  c.pretrained = j.value("pretrained", c.pretrained);
  c.input_size = j.value("input_size", c.input_size);
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Classifier& model, CheckpointMetadata meta) {
  if (meta.config != model.config()) meta.config = model.config();
  if (!meta.class_labels.empty() && static_cast<int>(meta.class_labels.size()) != meta.config.n_classes)
    throw CompatibilityError("checkpoint class labels do not match n_classes");
  TensorFile file;
  file.tensors = model.state_dict();
  if (meta.model_version.empty()) {
    json index;
    const std::string payload = payload_of(file.tensors, index);
    char hex[9];
    std::snprintf(hex, sizeof hex, "%08x", crc(payload.data(), payload.size()));
    meta.model_version = meta.config.backbone + "-k" + std::to_string(meta.config.n_classes) + "-e" +
                         std::to_string(meta.epoch) + "-" + hex;
  }
  file.meta = {{"kind", "habitat-classifier"},
               {"config", config_to_json(meta.config)},
               {"taxonomy_version", meta.taxonomy_version},
               {"class_labels", meta.class_labels},
               {"epoch", meta.epoch},
               {"val_accuracy", meta.val_accuracy},
               {"model_version", meta.model_version}};
  write_tensor_file(path, file);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const ClassTaxonomy* expected) {
  TensorFile file = read_tensor_file(path);
  LoadedCheckpoint out;
  try {
    const auto& m = file.meta;
    if (m.value("kind", "") != "habitat-classifier") throw IntegrityError(path.string() + ": not a classifier checkpoint");
    out.meta.config = config_from_json(m.at("config"));
    out.meta.taxonomy_version = m.at("taxonomy_version").get<std::string>();
    out.meta.class_labels = m.at("class_labels").get<std::vector<std::string>>();
    out.meta.epoch = m.at("epoch").get<int>();
    out.meta.val_accuracy = m.at("val_accuracy").get<double>();
    out.meta.model_version = m.at("model_version").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(path.string() + ": malformed checkpoint metadata: " + e.what());
  }
  if (expected) {
    if (static_cast<std::size_t>(out.meta.config.n_classes) != expected->size())
      throw CompatibilityError("checkpoint has " + std::to_string(out.meta.config.n_classes) +
                               " classes but the taxonomy has " + std::to_string(expected->size()));
    if (out.meta.taxonomy_version != expected->version())
      throw CompatibilityError("checkpoint taxonomy '" + out.meta.taxonomy_version + "' differs from '" +
                               expected->version() + "'");
    if (!out.meta.class_labels.empty() && out.meta.class_labels != expected->abbreviations())
      throw CompatibilityError("checkpoint class labels differ from the taxonomy");
  }
  ClassifierConfig cfg = out.meta.config;
  cfg.pretrained = false;
  out.model = build_classifier(cfg);
  out.model->load_state_dict(file.tensors, /*strict=*/true);
  return out;
}

}  // namespace habitat
