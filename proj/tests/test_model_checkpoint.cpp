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

#include <cstdlib>

#include <doctest.h>

#include "habitat/checkpoint.hpp"
#include "habitat/errors.hpp"
#include "habitat/fs_util.hpp"
#include "habitat/model.hpp"
#include "habitat/nn/blocks.hpp"
#include "habitat/nn/loss.hpp"
#include "habitat/taxonomy.hpp"
#include "support.hpp"

using namespace habitat;
using habitat::test::TempDir;

namespace {

ClassifierConfig tiny(int k = 18, int size = 32) {
  ClassifierConfig c;
  c.backbone = "tiny_dilated";
  c.pretrained = false;
  c.n_classes = k;
  c.input_size = size;
  return c;
}

nn::Tensor batch(std::int64_t b, std::int64_t size, std::uint64_t seed) {
  test::Gen g(seed);
  nn::Tensor t({b, 3, size, size});
  for (auto& v : t.values()) v = static_cast<float>(g.real(-2.0, 2.0));
  return t;
}

CheckpointMetadata meta_for(const ClassifierConfig& c, const ClassTaxonomy& tax) {
  CheckpointMetadata m;
  m.config = c;
  m.taxonomy_version = tax.version();
  m.class_labels = tax.abbreviations();
  m.epoch = 12;
  m.val_accuracy = 0.63;
  return m;
}

}  // namespace

TEST_CASE("classifier defaults") {
  const ClassifierConfig c;
  CHECK(c.n_classes == 18);
  CHECK(c.dropout_rate == 0.5);
  CHECK(c.backbone == "deeplabv3_resnet101");
  CHECK(c.pretrained);
  CHECK(c.input_size == 224);
  ClassifierConfig bad;
  bad.n_classes = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = {};
  bad.dropout_rate = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("output shapes") {
  auto m = build_classifier(tiny(18), {.seed = 1});
  const auto y = m->predict(batch(4, 32, 1));
  CHECK(y.shape() == nn::Shape{4, 18});
  CHECK(nn::all_finite(y));
  auto m2 = build_classifier(tiny(2, 48), {.seed = 1});
  CHECK(m2->predict(batch(1, 48, 2)).shape() == nn::Shape{1, 2});
  CHECK(m2->forward(batch(3, 48, 2), Mode::train).shape() == nn::Shape{3, 2});
  CHECK(m->head().options().kernel == 1);
  CHECK(m->head().options().in_channels == m->feature_channels());
}

TEST_CASE("eval mode is deterministic") {
  auto c = tiny();
  c.dropout_rate = 0.0;
  auto m = build_classifier(c, {.seed = 3});
  const auto x = batch(2, 32, 5);
  CHECK(m->predict(x) == m->predict(x));
  CHECK(m->forward(x, Mode::eval) == m->predict(x));

  auto d = build_classifier(tiny(), {.seed = 3});
  CHECK(d->predict(x) == d->predict(x));
  // Dropout is active only in training.
  CHECK_FALSE(d->forward(x, Mode::train) == d->forward(x, Mode::train));
}

TEST_CASE("input validation") {
  auto m = build_classifier(tiny(), {.seed = 1});
  CHECK_THROWS_AS(m->predict(batch(1, 40, 1)), ShapeError);
  CHECK_THROWS_AS(m->predict(nn::Tensor({1, 1, 32, 32})), ChannelError);
  CHECK_THROWS_AS(m->predict(nn::Tensor({3, 32, 32})), ShapeError);
}

TEST_CASE("build errors") {
  auto c = tiny();
  c.backbone = "nope";
  CHECK_THROWS_AS(build_classifier(c), ConfigError);
  c = tiny();
  c.pretrained = true;
  CHECK_THROWS_AS(build_classifier(c), ConfigError);

  TempDir empty("weights");
  ClassifierConfig full;
  try {
    build_classifier(full, {.weights_dir = empty.path()});
    FAIL("missing weights accepted");
  } catch (const FetchError& e) {
    CHECK(e.retriable());
    CHECK(std::string(e.what()).find("deeplabv3_resnet101.hwt") != std::string::npos);
  }
}

TEST_CASE("pretrained backbone weights are loaded, head is fresh") {
  nn::register_backbone("tiny_pretrained_test", [] {
    auto b = nn::make_backbone("tiny_dilated");
    b.has_pretrained_weights = true;
    return b;
  });
  TempDir dir("pre");
  auto c = tiny();
  c.backbone = "tiny_pretrained_test";
  c.pretrained = false;
  auto donor = build_classifier(c, {.seed = 77});
  TensorFile f;
  for (auto& [name, t] : donor->state_dict())
    if (!name.starts_with(kHeadPrefix)) f.tensors[name] = t;
  write_tensor_file(dir / "tiny_pretrained_test.hwt", f);

  c.pretrained = true;
  auto m = build_classifier(c, {.weights_dir = dir.path(), .seed = 5});
  const auto got = m->state_dict();
  const auto want = donor->state_dict();
  for (const auto& [name, t] : want) {
    if (name.starts_with(kHeadPrefix))
      CHECK_FALSE(got.at(name) == t);
    else
      CHECK_MESSAGE(got.at(name) == t, name);
  }
}

TEST_CASE("state dict round trip and strictness") {
  auto a = build_classifier(tiny(), {.seed = 1});
  auto b = build_classifier(tiny(), {.seed = 2});
  const auto x = batch(2, 32, 9);
  CHECK_FALSE(a->predict(x) == b->predict(x));
  b->load_state_dict(a->state_dict());
  CHECK(a->predict(x) == b->predict(x));

  auto state = a->state_dict();
  state["extra"] = nn::Tensor({1});
  CHECK_THROWS_AS(b->load_state_dict(state, true), CompatibilityError);
  b->load_state_dict(state, false);
  state.erase("classifier.4.weight");
  CHECK_THROWS_AS(b->load_state_dict(state, false), CompatibilityError);
  auto k17 = build_classifier(tiny(17), {.seed = 1});
  CHECK_THROWS_AS(k17->load_state_dict(a->state_dict()), CompatibilityError);
}

TEST_CASE("checkpoint round trip") {
  TempDir dir("ckpt");
  const auto& tax = ClassTaxonomy::living_england();
  auto m = build_classifier(tiny(), {.seed = 11});
  // Move running statistics away from their initial values.
  for (int i = 0; i < 3; ++i) m->forward(batch(4, 32, 20 + i), Mode::train);
  m->release_cache();
  save_checkpoint(dir / "m.hwt", *m, meta_for(m->config(), tax));

  const auto loaded = load_checkpoint(dir / "m.hwt", &tax);
  CHECK(loaded.meta.epoch == 12);
  CHECK(loaded.meta.val_accuracy == 0.63);
  CHECK(loaded.meta.config == m->config());
  CHECK(loaded.meta.class_labels == tax.abbreviations());
  CHECK(loaded.meta.taxonomy_version == tax.version());
  CHECK_FALSE(loaded.meta.model_version.empty());
  const auto x = batch(3, 32, 40);
  CHECK(nn::max_abs_diff(m->predict(x), loaded.model->predict(x)) < 1e-6f);
}

TEST_CASE("checkpoint compatibility and integrity") {
  TempDir dir("ckpt2");
  const auto& tax = ClassTaxonomy::living_england();
  auto m = build_classifier(tiny(), {.seed = 11});
  save_checkpoint(dir / "m.hwt", *m, meta_for(m->config(), tax));

  // 18-class checkpoint against a 17-class taxonomy.
  auto classes = tax.classes();
  classes.pop_back();
  const ClassTaxonomy k17(classes, "le-17");
  CHECK_THROWS_AS(load_checkpoint(dir / "m.hwt", &k17), CompatibilityError);
  const ClassTaxonomy renamed(tax.classes(), "other-version");
  CHECK_THROWS_AS(load_checkpoint(dir / "m.hwt", &renamed), CompatibilityError);

  auto bad_meta = meta_for(m->config(), tax);
  bad_meta.class_labels.pop_back();
  CHECK_THROWS_AS(save_checkpoint(dir / "x.hwt", *m, bad_meta), CompatibilityError);

  const auto bytes = read_file(dir / "m.hwt");
  write_file_atomic(dir / "trunc.hwt", std::string_view(bytes).substr(0, bytes.size() - 100));
  CHECK_THROWS_AS(load_checkpoint(dir / "trunc.hwt"), IntegrityError);
  auto flipped = bytes;
  flipped[flipped.size() - 5] ^= 0x40;
  write_file_atomic(dir / "flip.hwt", flipped);
  CHECK_THROWS_AS(load_checkpoint(dir / "flip.hwt"), IntegrityError);
  auto magic = bytes;
  magic[0] = 'X';
  write_file_atomic(dir / "magic.hwt", magic);
  CHECK_THROWS_AS(load_checkpoint(dir / "magic.hwt"), IntegrityError);
  auto header = bytes;
  header[20] ^= 0x01;
  write_file_atomic(dir / "header.hwt", header);
  CHECK_THROWS_AS(load_checkpoint(dir / "header.hwt"), IntegrityError);
}

TEST_CASE("softmax rows of model logits sum to one") {
  auto m = build_classifier(tiny(), {.seed = 2});
  const auto probs = nn::softmax_rows(m->predict(batch(5, 32, 2)));
  for (const auto& row : probs) {
    double s = 0.0;
    for (double p : row) s += p;
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
}
