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

#include <span>
#include <vector>

#include "habitat/nn/tensor.hpp"

namespace habitat::nn {

/// Row-wise softmax of an N×K logit matrix, computed in double precision.
std::vector<std::vector<double>> softmax_rows(const Tensor& logits);

struct LossResult {
  double loss = 0.0;  ///< mean over the batch
  Tensor grad;        ///< d loss / d logits, N×K
  std::vector<std::vector<double>> probabilities;
};

/// Mean softmax cross-entropy against integer targets.
LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> targets);

}  // namespace habitat::nn
