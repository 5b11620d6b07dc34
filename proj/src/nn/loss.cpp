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

#include "habitat/nn/loss.hpp"

#include <algorithm>
#include <cmath>

#include "habitat/errors.hpp"

namespace habitat::nn {

std::vector<std::vector<double>> softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("softmax expects N x K logits, got " + shape_string(logits.shape()));
  const auto n = logits.dim(0), k = logits.dim(1);
  std::vector<std::vector<double>> out(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(k)));
  for (std::int64_t i = 0; i < n; ++i) {
    const float* row = logits.data() + i * k;
    const double mx = *std::max_element(row, row + k);
    auto& p = out[static_cast<std::size_t>(i)];
    double z = 0.0;
    for (std::int64_t j = 0; j < k; ++j) z += p[j] = std::exp(row[j] - mx);
    for (auto& v : p) v /= z;
  }
  return out;
}

LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> targets) {
  LossResult r;
  r.probabilities = softmax_rows(logits);
  const auto n = logits.dim(0), k = logits.dim(1);
  if (static_cast<std::int64_t>(targets.size()) != n) throw ShapeError("cross-entropy: target count mismatch");
  r.grad = Tensor(logits.shape());
  double total = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const int t = targets[static_cast<std::size_t>(i)];
    if (t < 0 || t >= k) throw ValidationError("cross-entropy: target index out of range");
    const auto& p = r.probabilities[static_cast<std::size_t>(i)];
    const float* row = logits.data() + i * k;
    // log-sum-exp form keeps the loss finite for confident predictions.
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::int64_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    total += std::log(z) + mx - row[t];
    for (std::int64_t j = 0; j < k; ++j)
      r.grad[i * k + j] = static_cast<float>((p[static_cast<std::size_t>(j)] - (j == t ? 1.0 : 0.0)) / double(n));
  }
  r.loss = total / static_cast<double>(n);
  return r;
}

}  // namespace habitat::nn
