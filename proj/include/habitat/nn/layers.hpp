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

// Layers with explicit backward passes. A layer has two forward paths:
//   infer()    - const, no caching; safe to call from many threads.
//   forward()  - training path; caches what backward() needs.
// backward() accumulates into parameter gradients and returns the gradient
// with respect to the layer input of the most recent forward().

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "habitat/nn/tensor.hpp"
#include "habitat/rng.hpp"

namespace habitat::nn {

struct ParamRef {
  std::string name;
  Tensor* value;
  Tensor* grad;
};

struct BufferRef {
  std::string name;
  Tensor* value;
};

struct ForwardContext {
  /// Round conv operands to bfloat16 (accumulation stays fp32), the CPU
  /// analogue of autocast.
  bool low_precision = false;
  /// Set while a checkpointed segment re-runs its forward during backward:
  /// batch-norm statistics are not updated again and dropout replays its mask.
  bool recompute = false;
};

std::string join_name(const std::string& prefix, const std::string& name);

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor infer(const Tensor& x, const ForwardContext& ctx) const = 0;
  virtual Tensor forward(const Tensor& x, const ForwardContext& ctx) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual void collect(const std::string& /*prefix*/, std::vector<ParamRef>& /*params*/,
                       std::vector<BufferRef>& /*buffers*/) {}
  virtual void release_cache() {}
  virtual void initialize(Engine& /*eng*/) {}
  virtual void set_checkpointing(bool /*enabled*/) {}
};

using LayerPtr = std::unique_ptr<Layer>;

enum class ConvInit {
  default_uniform,      ///< U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weight and bias
  kaiming_normal_out,   ///< N(0, 2/fan_out), bias zero
};

struct ConvOptions {
  std::int64_t in_channels = 1;
  std::int64_t out_channels = 1;
  std::int64_t kernel = 1;
  std::int64_t stride = 1;
  std::int64_t padding = 0;
  std::int64_t dilation = 1;
  bool bias = true;
  ConvInit init = ConvInit::default_uniform;
};

/// 2-D convolution via im2col + GEMM.
class Conv2d final : public Layer {
 public:
  explicit Conv2d(ConvOptions options);

  Tensor infer(const Tensor& x, const ForwardContext& ctx) const override;
  Tensor forward(const Tensor& x, const ForwardContext& ctx) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(const std::string& prefix, std::vector<ParamRef>& params, std::vector<BufferRef>& buffers) override;
  void release_cache() override { input_ = Tensor(); }
  void initialize(Engine& eng) override;

  const ConvOptions& options() const noexcept { return opt_; }
  Tensor& weight() noexcept { return weight_; }
  Tensor& bias() noexcept { return bias_; }
  Tensor& weight_grad() noexcept { return weight_grad_; }
  Tensor& bias_grad() noexcept { return bias_grad_; }
  Shape output_shape(const Shape& input) const;

 private:
  Tensor compute(const Tensor& x, const Tensor& w) const;

  ConvOptions opt_;
  Tensor weight_, bias_, weight_grad_, bias_grad_;
  Tensor input_;       // as used in the GEMM (rounded when low precision)
  Tensor used_weight_; // idem
};

class BatchNorm2d final : public Layer {
 public:
  explicit BatchNorm2d(std::int64_t channels, double eps = 1e-5, double momentum = 0.1);

  Tensor infer(const Tensor& x, const ForwardContext& ctx) const override;
  Tensor forward(const Tensor& x, const ForwardContext& ctx) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(const std::string& prefix, std::vector<ParamRef>& params, std::vector<BufferRef>& buffers) override;
  void release_cache() override;
  void initialize(Engine& eng) override;

  Tensor& running_mean() noexcept { return running_mean_; }
  Tensor& running_var() noexcept { return running_var_; }
  Tensor& weight() noexcept { return weight_; }
  Tensor& bias() noexcept { return bias_; }

 private:
  std::int64_t channels_;
  double eps_, momentum_;
  Tensor weight_, bias_, weight_grad_, bias_grad_;
  Tensor running_mean_, running_var_, batches_tracked_;
  Tensor normalized_;             // cached x-hat
  std::vector<double> inv_std_;   // cached per channel
};

class ReLU final : public Layer {
 public:
  Tensor infer(const Tensor& x, const ForwardContext& ctx) const override;
  Tensor forward(const Tensor& x, const ForwardContext& ctx) override;
  Tensor backward(const Tensor& grad_out) override;
  void release_cache() override { output_ = Tensor(); }

 private:
  Tensor output_;
};

class MaxPool2d final : public Layer {
 public:
  MaxPool2d(std::int64_t kernel, std::int64_t stride, std::int64_t padding);

  Tensor infer(const Tensor& x, const ForwardContext& ctx) const override;
  Tensor forward(const Tensor& x, const ForwardContext& ctx) override;
  Tensor backward(const Tensor& grad_out) override;
  void release_cache() override;

 private:
  Tensor run(const Tensor& x, std::vector<std::int64_t>* argmax) const;

  std::int64_t kernel_, stride_, padding_;
  Shape input_shape_;
  std::vector<std::int64_t> argmax_;
};

/// Inverted dropout; identity at inference.
class Dropout final : public Layer {
 public:
  explicit Dropout(double rate);

  Tensor infer(const Tensor& x, const ForwardContext& ctx) const override;
  Tensor forward(const Tensor& x, const ForwardContext& ctx) override;
  Tensor backward(const Tensor& grad_out) override;
  void release_cache() override { mask_ = Tensor(); }
  void initialize(Engine& eng) override { engine_.seed(eng()); }
  double rate() const noexcept { return rate_; }

 private:
  double rate_;
  Engine engine_;
  Engine replay_;
  Tensor mask_;
};

/// N×C×H×W -> N×C.
class GlobalAvgPool final : public Layer {
 public:
  Tensor infer(const Tensor& x, const ForwardContext& ctx) const override;
  Tensor forward(const Tensor& x, const ForwardContext& ctx) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Shape input_shape_;
};

class Sequential final : public Layer {
 public:
  Sequential() = default;
  Sequential& add(std::string name, LayerPtr layer);
  template <typename T, typename... Args>
  T& emplace(std::string name, Args&&... args) {
    auto p = std::make_unique<T>(std::forward<Args>(args)...);
    T& ref = *p;
    add(std::move(name), std::move(p));
    return ref;
  }

  Tensor infer(const Tensor& x, const ForwardContext& ctx) const override;
  Tensor forward(const Tensor& x, const ForwardContext& ctx) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(const std::string& prefix, std::vector<ParamRef>& params, std::vector<BufferRef>& buffers) override;
  void release_cache() override;
  void initialize(Engine& eng) override;
  void set_checkpointing(bool enabled) override;

  std::size_t size() const noexcept { return children_.size(); }
  Layer& child(std::size_t i) { return *children_.at(i).second; }

 private:
  std::vector<std::pair<std::string, LayerPtr>> children_;
};

/// Gradient checkpointing: when enabled, the wrapped segment keeps only its
/// input during training and re-runs its forward pass inside backward().
/// Parameter names pass through unchanged.
class Checkpointed final : public Layer {
 public:
  explicit Checkpointed(LayerPtr inner) : inner_(std::move(inner)) {}

  Tensor infer(const Tensor& x, const ForwardContext& ctx) const override { return inner_->infer(x, ctx); }
  Tensor forward(const Tensor& x, const ForwardContext& ctx) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(const std::string& prefix, std::vector<ParamRef>& params, std::vector<BufferRef>& buffers) override {
    inner_->collect(prefix, params, buffers);
  }
  void release_cache() override;
  void initialize(Engine& eng) override { inner_->initialize(eng); }
  void set_checkpointing(bool enabled) override;

 private:
  LayerPtr inner_;
  bool enabled_ = false;
  bool active_ = false;  // last forward was checkpointed
  Tensor saved_input_;
  ForwardContext saved_ctx_;
};

}  // namespace habitat::nn
