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

#include <functional>
#include <string>
#include <vector>

#include "habitat/nn/layers.hpp"

namespace habitat::nn {

/// ResNet bottleneck (expansion 4). Parameter names follow torchvision:
/// conv1/bn1, conv2/bn2, conv3/bn3 and downsample.0/.1.
class Bottleneck final : public Layer {
 public:
  static constexpr std::int64_t kExpansion = 4;

  Bottleneck(std::int64_t inplanes, std::int64_t planes, std::int64_t stride, std::int64_t dilation, bool downsample);

  Tensor infer(const Tensor& x, const ForwardContext& ctx) const override;
  Tensor forward(const Tensor& x, const ForwardContext& ctx) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(const std::string& prefix, std::vector<ParamRef>& params, std::vector<BufferRef>& buffers) override;
  void release_cache() override;
  void initialize(Engine& eng) override;

 private:
  Sequential main_;
  std::unique_ptr<Sequential> downsample_;
  ReLU out_relu_;
};

/// Image pooling branch of ASPP: global average, 1x1 conv, BN, ReLU, then
/// broadcast back to the input resolution. Children are named 1, 2, 3.
class AsppPooling final : public Layer {
 public:
  AsppPooling(std::int64_t in_channels, std::int64_t out_channels);

  Tensor infer(const Tensor& x, const ForwardContext& ctx) const override;
  Tensor forward(const Tensor& x, const ForwardContext& ctx) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(const std::string& prefix, std::vector<ParamRef>& params, std::vector<BufferRef>& buffers) override {
    body_.collect(prefix, params, buffers);
  }
  void release_cache() override { body_.release_cache(); }
  void initialize(Engine& eng) override { body_.initialize(eng); }

 private:
  Sequential body_;
  Shape input_shape_;
};

/// Atrous spatial pyramid pooling: a 1x1 branch, one dilated 3x3 branch
/// per rate and an image pooling branch, concatenated and projected.
class Aspp final : public Layer {
 public:
  Aspp(std::int64_t in_channels, const std::vector<std::int64_t>& rates, std::int64_t out_channels);

  Tensor infer(const Tensor& x, const ForwardContext& ctx) const override;
  Tensor forward(const Tensor& x, const ForwardContext& ctx) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(const std::string& prefix, std::vector<ParamRef>& params, std::vector<BufferRef>& buffers) override;
  void release_cache() override;
  void initialize(Engine& eng) override;

 private:
  std::vector<LayerPtr> branches_;
  Sequential project_;
  std::int64_t out_channels_;
  Shape input_shape_;
};

Tensor concat_channels(std::span<const Tensor> parts);

/// Feature extractor produced by a backbone factory: maps N×3×H×W to
/// N×channels×(H/stride)×(W/stride).
struct Backbone {
  LayerPtr features;
  std::int64_t channels = 0;
  std::int64_t output_stride = 0;
  bool has_pretrained_weights = false;
};

using BackboneFactory = std::function<Backbone()>;

/// Registers a backbone under `name`; later registrations replace earlier ones.
void register_backbone(const std::string& name, BackboneFactory factory);
/// Throws ConfigError for unknown names.
Backbone make_backbone(const std::string& name);
std::vector<std::string> backbone_names();

}  // namespace habitat::nn
