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

#include "habitat/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>

#include "habitat/errors.hpp"

namespace habitat::nn {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using MapM = Eigen::Map<RowMat>;
using VecMapC = Eigen::Map<const Eigen::VectorXf>;
using VecMap = Eigen::Map<Eigen::VectorXf>;

struct ConvGeom {
  std::int64_t c, h, w, k, s, p, d, ho, wo;
};

void im2col(const float* img, const ConvGeom& g, float* col) {
  const std::int64_t plane = g.ho * g.wo;
  for (std::int64_t c = 0; c < g.c; ++c) {
    for (std::int64_t ki = 0; ki < g.k; ++ki) {
      for (std::int64_t kj = 0; kj < g.k; ++kj) {
        float* row = col + ((c * g.k + ki) * g.k + kj) * plane;
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          float* r = row + oy * g.wo;
          const std::int64_t iy = oy * g.s - g.p + ki * g.d;
          if (iy < 0 || iy >= g.h) {
            std::fill(r, r + g.wo, 0.0f);
            continue;
          }
          const float* src = img + (c * g.h + iy) * g.w;
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t ix = ox * g.s - g.p + kj * g.d;
            r[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im(const float* col, const ConvGeom& g, float* img) {
  const std::int64_t plane = g.ho * g.wo;
  for (std::int64_t c = 0; c < g.c; ++c) {
    for (std::int64_t ki = 0; ki < g.k; ++ki) {
      for (std::int64_t kj = 0; kj < g.k; ++kj) {
        const float* row = col + ((c * g.k + ki) * g.k + kj) * plane;
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t iy = oy * g.s - g.p + ki * g.d;
          if (iy < 0 || iy >= g.h) continue;
          const float* r = row + oy * g.wo;
          float* dst = img + (c * g.h + iy) * g.w;
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t ix = ox * g.s - g.p + kj * g.d;
            if (ix >= 0 && ix < g.w) dst[ix] += r[ox];
          }
        }
      }
    }
  }
}

void require_rank4(const Tensor& x, const char* who) {
  if (x.rank() != 4) throw ShapeError(std::string(who) + " expects N x C x H x W input, got " + shape_string(x.shape()));
}

}  // namespace

std::string join_name(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(ConvOptions options) : opt_(options) {
  if (opt_.in_channels < 1 || opt_.out_channels < 1 || opt_.kernel < 1 || opt_.stride < 1 || opt_.dilation < 1 ||
      opt_.padding < 0)
    throw ConfigError("invalid convolution options");
  const Shape ws{opt_.out_channels, opt_.in_channels, opt_.kernel, opt_.kernel};
  weight_ = Tensor(ws);
  weight_grad_ = Tensor(ws);
  if (opt_.bias) {
    bias_ = Tensor({opt_.out_channels});
    bias_grad_ = Tensor({opt_.out_channels});
  }
}

void Conv2d::initialize(Engine& eng) {
  const double fan_in = static_cast<double>(opt_.in_channels * opt_.kernel * opt_.kernel);
  const double fan_out = static_cast<double>(opt_.out_channels * opt_.kernel * opt_.kernel);
  if (opt_.init == ConvInit::kaiming_normal_out) {
    const double sd = std::sqrt(2.0 / fan_out);
    for (auto& v : weight_.values()) v = static_cast<float>(sd * normal01(eng));
    bias_.zero();
  } else {
    const double bound = 1.0 / std::sqrt(fan_in);
    for (auto& v : weight_.values()) v = static_cast<float>(uniform(eng, -bound, bound));
    for (auto& v : bias_.values()) v = static_cast<float>(uniform(eng, -bound, bound));
  }
}

Shape Conv2d::output_shape(const Shape& in) const {
  const auto span = opt_.dilation * (opt_.kernel - 1) + 1;
  const auto ho = (in[2] + 2 * opt_.padding - span) / opt_.stride + 1;
  const auto wo = (in[3] + 2 * opt_.padding - span) / opt_.stride + 1;
  if (in[2] + 2 * opt_.padding < span || in[3] + 2 * opt_.padding < span)
    throw ShapeError("convolution input " + shape_string(in) + " is smaller than the kernel");
  return {in[0], opt_.out_channels, ho, wo};
}

Tensor Conv2d::compute(const Tensor& x, const Tensor& w) const {
  require_rank4(x, "Conv2d");
  if (x.dim(1) != opt_.in_channels)
    throw ShapeError("Conv2d expects " + std::to_string(opt_.in_channels) + " input channels, got " +
                     shape_string(x.shape()));
  const Shape os = output_shape(x.shape());
  Tensor out(os);
  const ConvGeom g{x.dim(1), x.dim(2), x.dim(3), opt_.kernel, opt_.stride, opt_.padding, opt_.dilation, os[2], os[3]};
  const std::int64_t kdim = g.c * g.k * g.k;
  const std::int64_t plane = g.ho * g.wo;
  const bool direct = g.k == 1 && g.s == 1 && g.p == 0;
  std::vector<float> col(direct ? 0 : static_cast<std::size_t>(kdim * plane));
  const MapC wm(w.data(), opt_.out_channels, kdim);
  for (std::int64_t n = 0; n < x.dim(0); ++n) {
    const float* xn = x.data() + n * g.c * g.h * g.w;
    const float* cp = xn;
    if (!direct) {
      im2col(xn, g, col.data());
      cp = col.data();
    }
    MapM om(out.data() + n * opt_.out_channels * plane, opt_.out_channels, plane);
    om.noalias() = wm * MapC(cp, kdim, plane);
    if (opt_.bias) om.colwise() += VecMapC(bias_.data(), opt_.out_channels);
  }
  return out;
}

Tensor Conv2d::infer(const Tensor& x, const ForwardContext& ctx) const {
  if (ctx.low_precision) return compute(round_bf16(x), round_bf16(weight_));
  return compute(x, weight_);
}

Tensor Conv2d::forward(const Tensor& x, const ForwardContext& ctx) {
  if (ctx.low_precision) {
    input_ = round_bf16(x);
    used_weight_ = round_bf16(weight_);
  } else {
    input_ = x;
    used_weight_ = Tensor();
  }
  return compute(input_, ctx.low_precision ? used_weight_ : weight_);
}

Tensor Conv2d::backward(const Tensor& grad_out) {
  if (input_.empty()) throw Error("Conv2d::backward without a cached forward");
  const Tensor& w = used_weight_.empty() ? weight_ : used_weight_;
  const Shape os = output_shape(input_.shape());
  if (grad_out.shape() != os) throw ShapeError("Conv2d::backward gradient shape mismatch");
  const ConvGeom g{input_.dim(1), input_.dim(2), input_.dim(3), opt_.kernel, opt_.stride, opt_.padding, opt_.dilation,
                   os[2], os[3]};
  const std::int64_t kdim = g.c * g.k * g.k;
  const std::int64_t plane = g.ho * g.wo;
  const bool direct = g.k == 1 && g.s == 1 && g.p == 0;
  std::vector<float> col(direct ? 0 : static_cast<std::size_t>(kdim * plane));
  std::vector<float> dcol(direct ? 0 : static_cast<std::size_t>(kdim * plane));
  Tensor dx(input_.shape());
  const MapC wm(w.data(), opt_.out_channels, kdim);
  MapM dw(weight_grad_.data(), opt_.out_channels, kdim);
  for (std::int64_t n = 0; n < input_.dim(0); ++n) {
    const float* xn = input_.data() + n * g.c * g.h * g.w;
    const MapC dy(grad_out.data() + n * opt_.out_channels * plane, opt_.out_channels, plane);
    const float* cp = xn;
    if (!direct) {
      im2col(xn, g, col.data());
      cp = col.data();
    }
    dw.noalias() += dy * MapC(cp, kdim, plane).transpose();
    if (opt_.bias) VecMap(bias_grad_.data(), opt_.out_channels) += dy.rowwise().sum();
    float* dxn = dx.data() + n * g.c * g.h * g.w;
    if (direct) {
      MapM(dxn, kdim, plane).noalias() = wm.transpose() * dy;
    } else {
      MapM(dcol.data(), kdim, plane).noalias() = wm.transpose() * dy;
      col2im(dcol.data(), g, dxn);
    }
  }
  return dx;
}

void Conv2d::collect(const std::string& prefix, std::vector<ParamRef>& params, std::vector<BufferRef>&) {
  params.push_back({join_name(prefix, "weight"), &weight_, &weight_grad_});
  if (opt_.bias) params.push_back({join_name(prefix, "bias"), &bias_, &bias_grad_});
}

// ---------------------------------------------------------------------------
// BatchNorm2d

BatchNorm2d::BatchNorm2d(std::int64_t channels, double eps, double momentum)
    : channels_(channels),
      eps_(eps),
      momentum_(momentum),
      weight_({channels}, 1.0f),
      bias_({channels}),
      weight_grad_({channels}),
      bias_grad_({channels}),
      running_mean_({channels}),
      running_var_({channels}, 1.0f),
      batches_tracked_({1}) {}

void BatchNorm2d::initialize(Engine&) {
  weight_.fill(1.0f);
  bias_.zero();
  running_mean_.zero();
  running_var_.fill(1.0f);
  batches_tracked_.zero();
}

Tensor BatchNorm2d::infer(const Tensor& x, const ForwardContext&) const {
  require_rank4(x, "BatchNorm2d");
  if (x.dim(1) != channels_) throw ShapeError("BatchNorm2d channel mismatch");
  Tensor y(x.shape());
  const std::int64_t plane = x.dim(2) * x.dim(3);
  for (std::int64_t c = 0; c < channels_; ++c) {
    const double inv = 1.0 / std::sqrt(static_cast<double>(running_var_[c]) + eps_);
    const float scale = static_cast<float>(weight_[c] * inv);
    const float shift = static_cast<float>(bias_[c] - running_mean_[c] * weight_[c] * inv);
    for (std::int64_t n = 0; n < x.dim(0); ++n) {
      const float* src = x.data() + (n * channels_ + c) * plane;
      float* dst = y.data() + (n * channels_ + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) dst[i] = src[i] * scale + shift;
    }
  }
  return y;
}

Tensor BatchNorm2d::forward(const Tensor& x, const ForwardContext& ctx) {
  require_rank4(x, "BatchNorm2d");
  if (x.dim(1) != channels_) throw ShapeError("BatchNorm2d channel mismatch");
  const std::int64_t n_batch = x.dim(0), plane = x.dim(2) * x.dim(3);
  const double m = static_cast<double>(n_batch * plane);
  Tensor y(x.shape());
  normalized_ = Tensor(x.shape());
  inv_std_.assign(static_cast<std::size_t>(channels_), 0.0);
  for (std::int64_t c = 0; c < channels_; ++c) {
    double sum = 0.0;
    for (std::int64_t n = 0; n < n_batch; ++n) {
      const float* src = x.data() + (n * channels_ + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) sum += src[i];
    }
    const double mean = sum / m;
    double sq = 0.0;
    for (std::int64_t n = 0; n < n_batch; ++n) {
      const float* src = x.data() + (n * channels_ + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) sq += (src[i] - mean) * (src[i] - mean);
    }
    const double var = sq / m;
    const double inv = 1.0 / std::sqrt(var + eps_);
    inv_std_[c] = inv;
    for (std::int64_t n = 0; n < n_batch; ++n) {
      const float* src = x.data() + (n * channels_ + c) * plane;
      float* xh = normalized_.data() + (n * channels_ + c) * plane;
      float* dst = y.data() + (n * channels_ + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        xh[i] = static_cast<float>((src[i] - mean) * inv);
        dst[i] = xh[i] * weight_[c] + bias_[c];
      }
    }
    if (!ctx.recompute) {
      const double unbiased = m > 1 ? var * m / (m - 1) : var;
      running_mean_[c] = static_cast<float>((1 - momentum_) * running_mean_[c] + momentum_ * mean);
      running_var_[c] = static_cast<float>((1 - momentum_) * running_var_[c] + momentum_ * unbiased);
    }
  }
  if (!ctx.recompute) batches_tracked_[0] += 1.0f;
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& grad_out) {
  if (normalized_.empty()) throw Error("BatchNorm2d::backward without a cached forward");
  if (grad_out.shape() != normalized_.shape()) throw ShapeError("BatchNorm2d::backward gradient shape mismatch");
  const std::int64_t n_batch = grad_out.dim(0), plane = grad_out.dim(2) * grad_out.dim(3);
  const double m = static_cast<double>(n_batch * plane);
  Tensor dx(grad_out.shape());
  for (std::int64_t c = 0; c < channels_; ++c) {
    double sum_dy = 0.0, sum_dy_xh = 0.0;
    for (std::int64_t n = 0; n < n_batch; ++n) {
      const float* dy = grad_out.data() + (n * channels_ + c) * plane;
      const float* xh = normalized_.data() + (n * channels_ + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        sum_dy += dy[i];
        sum_dy_xh += static_cast<double>(dy[i]) * xh[i];
      }
    }
    weight_grad_[c] += static_cast<float>(sum_dy_xh);
    bias_grad_[c] += static_cast<float>(sum_dy);
    const double k = weight_[c] * inv_std_[c] / m;
    for (std::int64_t n = 0; n < n_batch; ++n) {
      const float* dy = grad_out.data() + (n * channels_ + c) * plane;
      const float* xh = normalized_.data() + (n * channels_ + c) * plane;
      float* d = dx.data() + (n * channels_ + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i)
        d[i] = static_cast<float>(k * (m * dy[i] - sum_dy - xh[i] * sum_dy_xh));
    }
  }
  return dx;
}

void BatchNorm2d::collect(const std::string& prefix, std::vector<ParamRef>& params, std::vector<BufferRef>& buffers) {
  params.push_back({join_name(prefix, "weight"), &weight_, &weight_grad_});
  params.push_back({join_name(prefix, "bias"), &bias_, &bias_grad_});
  buffers.push_back({join_name(prefix, "running_mean"), &running_mean_});
  buffers.push_back({join_name(prefix, "running_var"), &running_var_});
  buffers.push_back({join_name(prefix, "num_batches_tracked"), &batches_tracked_});
}

void BatchNorm2d::release_cache() {
  normalized_ = Tensor();
  inv_std_.clear();
}

// ---------------------------------------------------------------------------
// ReLU / MaxPool / Dropout / GlobalAvgPool

Tensor ReLU::infer(const Tensor& x, const ForwardContext&) const {
  Tensor y = x;
  for (auto& v : y.values()) v = v > 0.0f ? v : 0.0f;
  return y;
}

Tensor ReLU::forward(const Tensor& x, const ForwardContext& ctx) {
  output_ = infer(x, ctx);
  return output_;
}

Tensor ReLU::backward(const Tensor& grad_out) {
  if (grad_out.shape() != output_.shape()) throw ShapeError("ReLU::backward gradient shape mismatch");
  Tensor dx = grad_out;
  for (std::int64_t i = 0; i < dx.numel(); ++i)
    if (!(output_[i] > 0.0f)) dx[i] = 0.0f;
  return dx;
}

MaxPool2d::MaxPool2d(std::int64_t kernel, std::int64_t stride, std::int64_t padding)
    : kernel_(kernel), stride_(stride), padding_(padding) {}

Tensor MaxPool2d::run(const Tensor& x, std::vector<std::int64_t>* argmax) const {
  require_rank4(x, "MaxPool2d");
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto ho = (h + 2 * padding_ - kernel_) / stride_ + 1;
  const auto wo = (w + 2 * padding_ - kernel_) / stride_ + 1;
  Tensor y({n, c, ho, wo});
  if (argmax) argmax->assign(static_cast<std::size_t>(y.numel()), -1);
  for (std::int64_t nc = 0; nc < n * c; ++nc) {
    const float* src = x.data() + nc * h * w;
    for (std::int64_t oy = 0; oy < ho; ++oy) {
      for (std::int64_t ox = 0; ox < wo; ++ox) {
        float best = -std::numeric_limits<float>::infinity();
        std::int64_t best_i = -1;
        for (std::int64_t ky = 0; ky < kernel_; ++ky) {
          const auto iy = oy * stride_ - padding_ + ky;
          if (iy < 0 || iy >= h) continue;
          for (std::int64_t kx = 0; kx < kernel_; ++kx) {
            const auto ix = ox * stride_ - padding_ + kx;
            if (ix < 0 || ix >= w) continue;
            const float v = src[iy * w + ix];
            if (v > best || best_i < 0) {
              best = v;
              best_i = iy * w + ix;
            }
          }
        }
        const auto o = (nc * ho + oy) * wo + ox;
        y[o] = best;
        if (argmax) (*argmax)[static_cast<std::size_t>(o)] = nc * h * w + best_i;
      }
    }
  }
  return y;
}

Tensor MaxPool2d::infer(const Tensor& x, const ForwardContext&) const {
  return run(x, nullptr);
}

Tensor MaxPool2d::forward(const Tensor& x, const ForwardContext&) {
  input_shape_ = x.shape();
  return run(x, &argmax_);
}

Tensor MaxPool2d::backward(const Tensor& grad_out) {
  if (static_cast<std::int64_t>(argmax_.size()) != grad_out.numel())
    throw ShapeError("MaxPool2d::backward gradient shape mismatch");
  Tensor dx(input_shape_);
  for (std::int64_t i = 0; i < grad_out.numel(); ++i) dx[argmax_[static_cast<std::size_t>(i)]] += grad_out[i];
  return dx;
}

void MaxPool2d::release_cache() {
  argmax_.clear();
  argmax_.shrink_to_fit();
}

Dropout::Dropout(double rate) : rate_(rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must be in [0, 1)");
}

Tensor Dropout::infer(const Tensor& x, const ForwardContext&) const {
  return x;
}

Tensor Dropout::forward(const Tensor& x, const ForwardContext& ctx) {
  if (rate_ == 0.0) {
    mask_ = Tensor(x.shape(), 1.0f);
    return x;
  }
  if (ctx.recompute)
    engine_ = replay_;
  else
    replay_ = engine_;
  mask_ = Tensor(x.shape());
  const float keep_scale = static_cast<float>(1.0 / (1.0 - rate_));
  Tensor y = x;
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    mask_[i] = uniform01(engine_) >= rate_ ? keep_scale : 0.0f;
    y[i] *= mask_[i];
  }
  return y;
}

Tensor Dropout::backward(const Tensor& grad_out) {
  if (grad_out.shape() != mask_.shape()) throw ShapeError("Dropout::backward gradient shape mismatch");
  Tensor dx = grad_out;
  for (std::int64_t i = 0; i < dx.numel(); ++i) dx[i] *= mask_[i];
  return dx;
}

Tensor GlobalAvgPool::infer(const Tensor& x, const ForwardContext&) const {
  require_rank4(x, "GlobalAvgPool");
  const auto n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor y({n, c});
  for (std::int64_t i = 0; i < n * c; ++i) {
    double s = 0.0;
    const float* src = x.data() + i * plane;
    for (std::int64_t j = 0; j < plane; ++j) s += src[j];
    y[i] = static_cast<float>(s / static_cast<double>(plane));
  }
  return y;
}

Tensor GlobalAvgPool::forward(const Tensor& x, const ForwardContext& ctx) {
  input_shape_ = x.shape();
  return infer(x, ctx);
}

Tensor GlobalAvgPool::backward(const Tensor& grad_out) {
  Tensor dx(input_shape_);
  const auto plane = input_shape_[2] * input_shape_[3];
  const float scale = 1.0f / static_cast<float>(plane);
  for (std::int64_t i = 0; i < grad_out.numel(); ++i) {
    float* dst = dx.data() + i * plane;
    std::fill(dst, dst + plane, grad_out[i] * scale);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Sequential / Checkpointed

Sequential& Sequential::add(std::string name, LayerPtr layer) {
  children_.emplace_back(std::move(name), std::move(layer));
  return *this;
}

Tensor Sequential::infer(const Tensor& x, const ForwardContext& ctx) const {
  Tensor y = x;
  for (const auto& [name, layer] : children_) y = layer->infer(y, ctx);
  return y;
}

Tensor Sequential::forward(const Tensor& x, const ForwardContext& ctx) {
  Tensor y = x;
  for (auto& [name, layer] : children_) y = layer->forward(y, ctx);
  return y;
}

Tensor Sequential::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (auto it = children_.rbegin(); it != children_.rend(); ++it) g = it->second->backward(g);
  return g;
}

void Sequential::collect(const std::string& prefix, std::vector<ParamRef>& params, std::vector<BufferRef>& buffers) {
  for (auto& [name, layer] : children_) layer->collect(join_name(prefix, name), params, buffers);
}

void Sequential::release_cache() {
  for (auto& [name, layer] : children_) layer->release_cache();
}

void Sequential::initialize(Engine& eng) {
  for (auto& [name, layer] : children_) layer->initialize(eng);
}

void Sequential::set_checkpointing(bool enabled) {
  for (auto& [name, layer] : children_) layer->set_checkpointing(enabled);
}

Tensor Checkpointed::forward(const Tensor& x, const ForwardContext& ctx) {
  active_ = enabled_ && !ctx.recompute;
  if (!active_) return inner_->forward(x, ctx);
  saved_input_ = x;
  saved_ctx_ = ctx;
  Tensor y = inner_->forward(x, ctx);
  inner_->release_cache();
  return y;
}

Tensor Checkpointed::backward(const Tensor& grad_out) {
  if (!active_) return inner_->backward(grad_out);
  ForwardContext replay = saved_ctx_;
  replay.recompute = true;
  inner_->forward(saved_input_, replay);
  Tensor g = inner_->backward(grad_out);
  inner_->release_cache();
  saved_input_ = Tensor();
  return g;
}

void Checkpointed::release_cache() {
  saved_input_ = Tensor();
  inner_->release_cache();
}

void Checkpointed::set_checkpointing(bool enabled) {
  enabled_ = enabled;
  inner_->set_checkpointing(enabled);
}

}  // namespace habitat::nn
