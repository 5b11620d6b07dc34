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

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "habitat/nn/blocks.hpp"
#include "habitat/nn/layers.hpp"

namespace habitat {

struct ClassifierConfig {
  int n_classes = 18;
  double dropout_rate = 0.5;
  std::string backbone = "deeplabv3_resnet101";
  bool pretrained = true;
  int input_size = 224;

  void validate() const;
  bool operator==(const ClassifierConfig&) const = default;
};

enum class Mode { train, eval };

using StateDict = std::map<std::string, nn::Tensor>;

/// Backbone features -> dropout -> 1x1 conv to n_classes -> global average
/// pool -> N×K logits. The projection is stored as "classifier.4", the slot
/// the segmentation head occupies in the torchvision layout.
class Classifier {
 public:
  Classifier(ClassifierConfig config, nn::Backbone backbone);

  /// Mode::train caches activations for backward() and applies dropout;
  /// Mode::eval is equivalent to predict().
  nn::Tensor forward(const nn::Tensor& batch, Mode mode);
  /// Eval-mode logits. Const and safe to call concurrently.
  nn::Tensor predict(const nn::Tensor& batch) const;
  /// Backbone feature map (eval mode), exposed for diagnostics and tests.
  nn::Tensor features(const nn::Tensor& batch) const;

  /// Accumulates parameter gradients from d loss / d logits of the last
  /// train-mode forward.
  void backward(const nn::Tensor& grad_logits);
  void release_cache();

  std::vector<nn::ParamRef> parameters();
  std::vector<nn::BufferRef> buffers();
  StateDict state_dict() const;
  /// Throws CompatibilityError on a missing entry or shape mismatch (or on
  /// unexpected entries when strict).
  void load_state_dict(const StateDict& state, bool strict = true);
  /// Loads only the backbone entries of `state`; head entries are ignored.
  void load_backbone_state(const StateDict& state);

  void initialize(std::uint64_t seed);
  void set_mixed_precision(bool enabled) noexcept { mixed_precision_ = enabled; }
  void set_gradient_checkpointing(bool enabled);

  const ClassifierConfig& config() const noexcept { return config_; }
  std::int64_t feature_channels() const noexcept { return feature_channels_; }
  nn::Conv2d& head() noexcept { return head_; }

 private:
  void check_input(const nn::Tensor& batch) const;
  void collect(std::vector<nn::ParamRef>& params, std::vector<nn::BufferRef>& buffers);

  ClassifierConfig config_;
  nn::LayerPtr features_;
  std::int64_t feature_channels_;
  nn::Dropout dropout_;
  nn::Conv2d head_;
  nn::GlobalAvgPool pool_;
  bool mixed_precision_ = false;
};

inline constexpr const char* kHeadPrefix = "classifier.4";

struct BuildOptions {
  /// Directory holding <backbone>.hwt weight files; empty selects
  /// $HABITAT_WEIGHTS_DIR, then ~/.cache/habitat/weights.
  std::filesystem::path weights_dir;
  std::uint64_t seed = 0;
};

std::filesystem::path default_weights_dir();

/// Throws ConfigError for an invalid config or unknown backbone, and the
/// retriable FetchError when pretrained weights are requested but absent.
std::unique_ptr<Classifier> build_classifier(const ClassifierConfig& config, const BuildOptions& options = {});

}  // namespace habitat
