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

#include "habitat/model.hpp"

#include <cstdlib>

#include "habitat/checkpoint.hpp"
#include "habitat/errors.hpp"
#include "habitat/rng.hpp"

namespace habitat {

namespace {

nn::ConvOptions head_options(std::int64_t in, int classes) {
  nn::ConvOptions o;
  o.in_channels = in;
  o.out_channels = classes;
  o.kernel = 1;
  o.bias = true;
  o.init = nn::ConvInit::default_uniform;
  return o;
}

bool is_head(const std::string& name) {
  return name.rfind(std::string(kHeadPrefix) + ".", 0) == 0;
}

}  // namespace

void ClassifierConfig::validate() const {
  if (n_classes < 2) throw ConfigError("n_classes must be at least 2");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must be in [0, 1)");
  if (input_size < 32) throw ConfigError("input_size must be at least 32");
  if (backbone.empty()) throw ConfigError("backbone identifier is empty");
}

Classifier::Classifier(ClassifierConfig config, nn::Backbone backbone)
    : config_(std::move(config)),
      features_(std::move(backbone.features)),
      feature_channels_(backbone.channels),
      dropout_(config_.dropout_rate),
      head_(head_options(feature_channels_, config_.n_classes)) {
  config_.validate();
}

void Classifier::check_input(const nn::Tensor& batch) const {
  if (batch.rank() != 4) throw ShapeError("expected a B x 3 x H x W batch, got " + nn::shape_string(batch.shape()));
  if (batch.dim(1) != 3) throw ChannelError("expected 3 input channels, got " + std::to_string(batch.dim(1)));
  if (batch.dim(2) != config_.input_size || batch.dim(3) != config_.input_size)
    throw ShapeError("expected spatial size " + std::to_string(config_.input_size) + "x" +
                     std::to_string(config_.input_size) + ", got " + nn::shape_string(batch.shape()));
}

nn::Tensor Classifier::forward(const nn::Tensor& batch, Mode mode) {
  if (mode == Mode::eval) return predict(batch);
  check_input(batch);
  nn::ForwardContext ctx;
  ctx.low_precision = mixed_precision_;
  nn::Tensor f = features_->forward(batch, ctx);
  f = dropout_.forward(f, ctx);
  f = head_.forward(f, ctx);
  return pool_.forward(f, ctx);
}

nn::Tensor Classifier::predict(const nn::Tensor& batch) const {
  check_input(batch);
  const nn::ForwardContext ctx;
  return pool_.infer(head_.infer(features_->infer(batch, ctx), ctx), ctx);
}

nn::Tensor Classifier::features(const nn::Tensor& batch) const {
  check_input(batch);
  return features_->infer(batch, nn::ForwardContext{});
}

void Classifier::backward(const nn::Tensor& grad_logits) {
  nn::Tensor g = pool_.backward(grad_logits);
  g = head_.backward(g);
  g = dropout_.backward(g);
  features_->backward(g);
}

void Classifier::release_cache() {
  features_->release_cache();
  dropout_.release_cache();
  head_.release_cache();
  pool_.release_cache();
}

void Classifier::collect(std::vector<nn::ParamRef>& params, std::vector<nn::BufferRef>& buffers) {
  features_->collect("", params, buffers);
  head_.collect(kHeadPrefix, params, buffers);
}

std::vector<nn::ParamRef> Classifier::parameters() {
  std::vector<nn::ParamRef> p;
  std::vector<nn::BufferRef> b;
  collect(p, b);
  return p;
}

std::vector<nn::BufferRef> Classifier::buffers() {
  std::vector<nn::ParamRef> p;
  std::vector<nn::BufferRef> b;
  collect(p, b);
  return b;
}

StateDict Classifier::state_dict() const {
  std::vector<nn::ParamRef> p;
  std::vector<nn::BufferRef> b;
  const_cast<Classifier*>(this)->collect(p, b);
  StateDict out;
  for (const auto& r : p) out.emplace(r.name, *r.value);
  for (const auto& r : b) out.emplace(r.name, *r.value);
  return out;
}

namespace {

void assign(const std::string& name, nn::Tensor* dst, const StateDict& state) {
  const auto it = state.find(name);
  if (it == state.end()) throw CompatibilityError("state is missing '" + name + "'");
  if (it->second.shape() != dst->shape())
    throw CompatibilityError("shape mismatch for '" + name + "': expected " + nn::shape_string(dst->shape()) +
                             ", found " + nn::shape_string(it->second.shape()));
  *dst = it->second;
}

}  // namespace

void Classifier::load_state_dict(const StateDict& state, bool strict) {
  std::vector<nn::ParamRef> p;
  std::vector<nn::BufferRef> b;
  collect(p, b);
  for (const auto& r : p) assign(r.name, r.value, state);
  for (const auto& r : b) assign(r.name, r.value, state);
  if (strict && state.size() != p.size() + b.size()) {
    StateDict known;
    for (const auto& r : p) known.emplace(r.name, nn::Tensor());
    for (const auto& r : b) known.emplace(r.name, nn::Tensor());
    for (const auto& [name, t] : state)
      if (!known.contains(name)) throw CompatibilityError("unexpected state entry '" + name + "'");
  }
}

void Classifier::load_backbone_state(const StateDict& state) {
  std::vector<nn::ParamRef> p;
  std::vector<nn::BufferRef> b;
  collect(p, b);
  for (const auto& r : p)
    if (!is_head(r.name)) assign(r.name, r.value, state);
  for (const auto& r : b)
    if (!is_head(r.name)) assign(r.name, r.value, state);
}

void Classifier::initialize(std::uint64_t seed) {
  Engine eng(derive_seed(seed, "model.init"));
  features_->initialize(eng);
  head_.initialize(eng);
  dropout_.initialize(eng);
}

void Classifier::set_gradient_checkpointing(bool enabled) {
  features_->set_checkpointing(enabled);
}

std::filesystem::path default_weights_dir() {
  if (const char* env = std::getenv("HABITAT_WEIGHTS_DIR"); env && *env) return env;
  if (const char* home = std::getenv("HOME"); home && *home)
    return std::filesystem::path(home) / ".cache" / "habitat" / "weights";
  return std::filesystem::path(".cache") / "habitat" / "weights";
}

std::unique_ptr<Classifier> build_classifier(const ClassifierConfig& config, const BuildOptions& options) {
  config.validate();
  nn::Backbone backbone = nn::make_backbone(config.backbone);
  const bool has_weights = backbone.has_pretrained_weights;
  auto model = std::make_unique<Classifier>(config, std::move(backbone));
  model->initialize(options.seed);
  if (!config.pretrained) return model;
  if (!has_weights) throw ConfigError("backbone '" + config.backbone + "' has no pretrained weights; set pretrained=false");
  const auto dir = options.weights_dir.empty() ? default_weights_dir() : options.weights_dir;
  const auto file = dir / (config.backbone + ".hwt");
  if (!std::filesystem::exists(file))
    throw FetchError("pretrained weights not found at " + file.string() +
                     "; generate them with tools/convert_torchvision_weights.py or pass pretrained=false");
  model->load_backbone_state(read_tensor_file(file).tensors);
  return model;
}

}  // namespace habitat
