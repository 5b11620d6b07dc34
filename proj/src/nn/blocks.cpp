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

#include "habitat/nn/blocks.hpp"

#include <algorithm>
#include <map>
#include <mutex>

#include "habitat/errors.hpp"

namespace habitat::nn {

namespace {

ConvOptions conv(std::int64_t in, std::int64_t out, std::int64_t k, std::int64_t stride = 1, std::int64_t dilation = 1,
                 ConvInit init = ConvInit::kaiming_normal_out) {
  ConvOptions o;
  o.in_channels = in;
  o.out_channels = out;
  o.kernel = k;
  o.stride = stride;
  o.dilation = dilation;
  o.padding = k == 1 ? 0 : dilation * (k / 2);
  o.bias = false;
  o.init = init;
  return o;
}

// Conv -> BN -> ReLU with children named 0, 1, 2.
std::unique_ptr<Sequential> conv_bn_relu(const ConvOptions& o) {
  auto s = std::make_unique<Sequential>();
  s->emplace<Conv2d>("0", o);
  s->emplace<BatchNorm2d>("1", o.out_channels);
  s->emplace<ReLU>("2");
  return s;
}

Tensor split_channels(const Tensor& t, std::int64_t begin, std::int64_t count) {
  const auto n = t.dim(0), c = t.dim(1), plane = t.dim(2) * t.dim(3);
  Tensor out({n, count, t.dim(2), t.dim(3)});
  for (std::int64_t i = 0; i < n; ++i)
    std::copy_n(t.data() + (i * c + begin) * plane, count * plane, out.data() + i * count * plane);
  return out;
}

}  // namespace

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const auto n = parts[0].dim(0), h = parts[0].dim(2), w = parts[0].dim(3);
  std::int64_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 4 || p.dim(0) != n || p.dim(2) != h || p.dim(3) != w)
      throw ShapeError("concat_channels: mismatched shape " + shape_string(p.shape()));
    total += p.dim(1);
  }
  Tensor out({n, total, h, w});
  const auto plane = h * w;
  for (std::int64_t i = 0; i < n; ++i) {
    float* dst = out.data() + i * total * plane;
    for (const auto& p : parts) {
      const auto c = p.dim(1);
      dst = std::copy_n(p.data() + i * c * plane, c * plane, dst);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bottleneck

Bottleneck::Bottleneck(std::int64_t inplanes, std::int64_t planes, std::int64_t stride, std::int64_t dilation,
                       bool downsample) {
  main_.emplace<Conv2d>("conv1", conv(inplanes, planes, 1));
  main_.emplace<BatchNorm2d>("bn1", planes);
  main_.emplace<ReLU>("relu1");
  main_.emplace<Conv2d>("conv2", conv(planes, planes, 3, stride, dilation));
  main_.emplace<BatchNorm2d>("bn2", planes);
  main_.emplace<ReLU>("relu2");
  main_.emplace<Conv2d>("conv3", conv(planes, planes * kExpansion, 1));
  main_.emplace<BatchNorm2d>("bn3", planes * kExpansion);
  if (downsample) {
    downsample_ = std::make_unique<Sequential>();
    downsample_->emplace<Conv2d>("0", conv(inplanes, planes * kExpansion, 1, stride));
    downsample_->emplace<BatchNorm2d>("1", planes * kExpansion);
  } else if (inplanes != planes * kExpansion || stride != 1) {
    throw ConfigError("bottleneck without downsample must preserve shape");
  }
}

Tensor Bottleneck::infer(const Tensor& x, const ForwardContext& ctx) const {
  Tensor out = main_.infer(x, ctx);
  out += downsample_ ? downsample_->infer(x, ctx) : x;
  return out_relu_.infer(out, ctx);
}

Tensor Bottleneck::forward(const Tensor& x, const ForwardContext& ctx) {
  Tensor out = main_.forward(x, ctx);
  out += downsample_ ? downsample_->forward(x, ctx) : x;
  return out_relu_.forward(out, ctx);
}

Tensor Bottleneck::backward(const Tensor& grad_out) {
  const Tensor g = out_relu_.backward(grad_out);
  Tensor dx = main_.backward(g);
  dx += downsample_ ? downsample_->backward(g) : g;
  return dx;
}

void Bottleneck::collect(const std::string& prefix, std::vector<ParamRef>& params, std::vector<BufferRef>& buffers) {
  main_.collect(prefix, params, buffers);
  if (downsample_) downsample_->collect(join_name(prefix, "downsample"), params, buffers);
}

void Bottleneck::release_cache() {
  main_.release_cache();
  if (downsample_) downsample_->release_cache();
  out_relu_.release_cache();
}

void Bottleneck::initialize(Engine& eng) {
  main_.initialize(eng);
  if (downsample_) downsample_->initialize(eng);
}

// ---------------------------------------------------------------------------
// ASPP

AsppPooling::AsppPooling(std::int64_t in_channels, std::int64_t out_channels) {
  body_.emplace<Conv2d>("1", conv(in_channels, out_channels, 1));
  body_.emplace<BatchNorm2d>("2", out_channels);
  body_.emplace<ReLU>("3");
}

namespace {

Tensor spatial_mean(const Tensor& x) {
  const auto n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor y({n, c, 1, 1});
  for (std::int64_t i = 0; i < n * c; ++i) {
    double s = 0.0;
    const float* src = x.data() + i * plane;
    for (std::int64_t j = 0; j < plane; ++j) s += src[j];
    y[i] = static_cast<float>(s / static_cast<double>(plane));
  }
  return y;
}

Tensor broadcast(const Tensor& pooled, std::int64_t h, std::int64_t w) {
  const auto nc = pooled.dim(0) * pooled.dim(1);
  Tensor y({pooled.dim(0), pooled.dim(1), h, w});
  for (std::int64_t i = 0; i < nc; ++i) std::fill_n(y.data() + i * h * w, h * w, pooled[i]);
  return y;
}

}  // namespace

Tensor AsppPooling::infer(const Tensor& x, const ForwardContext& ctx) const {
  return broadcast(body_.infer(spatial_mean(x), ctx), x.dim(2), x.dim(3));
}

Tensor AsppPooling::forward(const Tensor& x, const ForwardContext& ctx) {
  input_shape_ = x.shape();
  return broadcast(body_.forward(spatial_mean(x), ctx), x.dim(2), x.dim(3));
}

Tensor AsppPooling::backward(const Tensor& grad_out) {
  const Tensor summed = [&] {
    Tensor s = spatial_mean(grad_out);
    const float plane = static_cast<float>(grad_out.dim(2) * grad_out.dim(3));
    for (auto& v : s.values()) v *= plane;
    return s;
  }();
  const Tensor g = body_.backward(summed);
  Tensor dx = broadcast(g, input_shape_[2], input_shape_[3]);
  const float inv = 1.0f / static_cast<float>(input_shape_[2] * input_shape_[3]);
  for (auto& v : dx.values()) v *= inv;
  return dx;
}

Aspp::Aspp(std::int64_t in_channels, const std::vector<std::int64_t>& rates, std::int64_t out_channels)
    : out_channels_(out_channels) {
  branches_.push_back(conv_bn_relu(conv(in_channels, out_channels, 1)));
  for (auto r : rates) branches_.push_back(conv_bn_relu(conv(in_channels, out_channels, 3, 1, r)));
  branches_.push_back(std::make_unique<AsppPooling>(in_channels, out_channels));
  const auto cat = static_cast<std::int64_t>(branches_.size()) * out_channels;
  project_.emplace<Conv2d>("0", conv(cat, out_channels, 1));
  project_.emplace<BatchNorm2d>("1", out_channels);
  project_.emplace<ReLU>("2");
  project_.emplace<Dropout>("3", 0.5);
}

Tensor Aspp::infer(const Tensor& x, const ForwardContext& ctx) const {
  std::vector<Tensor> outs;
  outs.reserve(branches_.size());
  for (const auto& b : branches_) outs.push_back(b->infer(x, ctx));
  return project_.infer(concat_channels(outs), ctx);
}

Tensor Aspp::forward(const Tensor& x, const ForwardContext& ctx) {
  input_shape_ = x.shape();
  std::vector<Tensor> outs;
  outs.reserve(branches_.size());
  for (auto& b : branches_) outs.push_back(b->forward(x, ctx));
  return project_.forward(concat_channels(outs), ctx);
}

Tensor Aspp::backward(const Tensor& grad_out) {
  const Tensor g = project_.backward(grad_out);
  Tensor dx(input_shape_);
  for (std::size_t i = 0; i < branches_.size(); ++i)
    dx += branches_[i]->backward(split_channels(g, static_cast<std::int64_t>(i) * out_channels_, out_channels_));
  return dx;
}

void Aspp::collect(const std::string& prefix, std::vector<ParamRef>& params, std::vector<BufferRef>& buffers) {
  for (std::size_t i = 0; i < branches_.size(); ++i)
    branches_[i]->collect(join_name(prefix, "convs." + std::to_string(i)), params, buffers);
  project_.collect(join_name(prefix, "project"), params, buffers);
}

void Aspp::release_cache() {
  for (auto& b : branches_) b->release_cache();
  project_.release_cache();
}

void Aspp::initialize(Engine& eng) {
  for (auto& b : branches_) b->initialize(eng);
  project_.initialize(eng);
}

// ---------------------------------------------------------------------------
// Backbones

namespace {

LayerPtr checkpointed(LayerPtr inner) {
  return std::make_unique<Checkpointed>(std::move(inner));
}

// DeepLabV3 head minus its final projection: ASPP, 3x3 conv, BN, ReLU.
std::unique_ptr<Sequential> deeplab_neck(std::int64_t in_channels, const std::vector<std::int64_t>& rates,
                                         std::int64_t channels) {
  auto s = std::make_unique<Sequential>();
  s->add("0", checkpointed(std::make_unique<Aspp>(in_channels, rates, channels)));
  s->emplace<Conv2d>("1", conv(channels, channels, 3));
  s->emplace<BatchNorm2d>("2", channels);
  s->emplace<ReLU>("3");
  return s;
}

// torchvision ResNet with replace_stride_with_dilation = [false, true, true].
Backbone deeplab_resnet(const std::vector<int>& blocks) {
  auto body = std::make_unique<Sequential>();
  ConvOptions stem = conv(3, 64, 7, 2);
  stem.padding = 3;
  body->emplace<Conv2d>("conv1", stem);
  body->emplace<BatchNorm2d>("bn1", 64);
  body->emplace<ReLU>("relu");
  body->emplace<MaxPool2d>("maxpool", 3, 2, 1);

  std::int64_t inplanes = 64, dilation = 1;
  const std::int64_t planes[4] = {64, 128, 256, 512};
  const std::int64_t strides[4] = {1, 2, 2, 2};
  const bool dilate[4] = {false, false, true, true};
  for (int l = 0; l < 4; ++l) {
    auto layer = std::make_unique<Sequential>();
    std::int64_t stride = strides[l];
    const std::int64_t previous_dilation = dilation;
    if (dilate[l]) {
      dilation *= stride;
      stride = 1;
    }
    const bool ds = stride != 1 || inplanes != planes[l] * Bottleneck::kExpansion;
    layer->add("0", checkpointed(std::make_unique<Bottleneck>(inplanes, planes[l], stride, previous_dilation, ds)));
    inplanes = planes[l] * Bottleneck::kExpansion;
    for (int b = 1; b < blocks[static_cast<std::size_t>(l)]; ++b)
      layer->add(std::to_string(b), checkpointed(std::make_unique<Bottleneck>(inplanes, planes[l], 1, dilation, false)));
    body->add("layer" + std::to_string(l + 1), std::move(layer));
  }

  auto features = std::make_unique<Sequential>();
  features->add("backbone", std::move(body));
  features->add("classifier", deeplab_neck(2048, {12, 24, 36}, 256));
  return {std::move(features), 256, 8, true};
}

Backbone tiny_dilated() {
  auto stem = std::make_unique<Sequential>();
  stem->emplace<Conv2d>("0", conv(3, 16, 3, 2));
  stem->emplace<BatchNorm2d>("1", 16);
  stem->emplace<ReLU>("2");
  stem->emplace<Conv2d>("3", conv(16, 32, 3, 2));
  stem->emplace<BatchNorm2d>("4", 32);
  stem->emplace<ReLU>("5");
  auto layer = std::make_unique<Sequential>();
  layer->add("0", checkpointed(std::make_unique<Bottleneck>(32, 8, 2, 1, true)));
  layer->add("1", checkpointed(std::make_unique<Bottleneck>(32, 8, 1, 2, false)));

  auto body = std::make_unique<Sequential>();
  body->add("stem", std::move(stem));
  body->add("layer1", std::move(layer));
  auto features = std::make_unique<Sequential>();
  features->add("backbone", std::move(body));
  features->add("classifier", deeplab_neck(32, {2, 4}, 32));
  return {std::move(features), 32, 8, false};
}

struct Registry {
  std::mutex mu;
  std::map<std::string, BackboneFactory> factories;

  Registry() {
    factories["deeplabv3_resnet101"] = [] { return deeplab_resnet({3, 4, 23, 3}); };
    factories["deeplabv3_resnet50"] = [] { return deeplab_resnet({3, 4, 6, 3}); };
    factories["tiny_dilated"] = tiny_dilated;
  }
};

Registry& registry() {
  static Registry r;
  return r;
}

}  // namespace

void register_backbone(const std::string& name, BackboneFactory factory) {
  auto& r = registry();
  std::lock_guard lock(r.mu);
  r.factories[name] = std::move(factory);
}

Backbone make_backbone(const std::string& name) {
  auto& r = registry();
  BackboneFactory f;
  {
    std::lock_guard lock(r.mu);
    const auto it = r.factories.find(name);
    if (it == r.factories.end()) {
      std::string known;
      for (const auto& [k, v] : r.factories) known += (known.empty() ? "" : ", ") + k;
      throw ConfigError("unknown backbone '" + name + "' (known: " + known + ")");
    }
    f = it->second;
  }
  return f();
}

std::vector<std::string> backbone_names() {
  auto& r = registry();
  std::lock_guard lock(r.mu);
  std::vector<std::string> out;
  for (const auto& [k, v] : r.factories) out.push_back(k);
  return out;
}

}  // namespace habitat::nn
