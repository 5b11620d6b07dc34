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

#include "habitat/nn/optim.hpp"

#include <cmath>

#include "habitat/errors.hpp"

namespace habitat::nn {

AdamW::AdamW(std::vector<ParamRef> params, AdamWConfig config) : params_(std::move(params)), config_(config) {
  if (!(config_.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (config_.weight_decay < 0.0) throw ConfigError("weight decay must be nonnegative");
  for (const auto& p : params_) {
    m_.emplace_back(static_cast<std::size_t>(p.value->numel()), 0.0f);
    v_.emplace_back(static_cast<std::size_t>(p.value->numel()), 0.0f);
  }
}

void AdamW::step() {
  ++steps_;
  const double lr = config_.learning_rate, b1 = config_.beta1, b2 = config_.beta2;
  const double bc1 = 1.0 - std::pow(b1, double(steps_));
  const double bc2_sqrt = std::sqrt(1.0 - std::pow(b2, double(steps_)));
  const float decay = static_cast<float>(1.0 - lr * config_.weight_decay);
  const float step_size = static_cast<float>(lr / bc1);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    float* w = params_[i].value->data();
    const float* g = params_[i].grad->data();
    float* m = m_[i].data();
    float* v = v_[i].data();
    const auto n = params_[i].value->numel();
    for (std::int64_t j = 0; j < n; ++j) {
      w[j] *= decay;
      m[j] = static_cast<float>(b1 * m[j] + (1.0 - b1) * g[j]);
      v[j] = static_cast<float>(b2 * v[j] + (1.0 - b2) * double(g[j]) * g[j]);
      const float denom = static_cast<float>(std::sqrt(double(v[j])) / bc2_sqrt + config_.eps);
      w[j] -= step_size * m[j] / denom;
    }
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.grad->zero();
}

}  // namespace habitat::nn
