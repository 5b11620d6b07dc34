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

#include <climits>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <ostream>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "habitat/balance.hpp"
#include "habitat/dataset.hpp"
#include "habitat/evaluation.hpp"
#include "habitat/model.hpp"
#include "habitat/preprocess.hpp"

namespace habitat {

/// Patience value that disables early stopping.
inline constexpr int kNoEarlyStopping = INT_MAX;

struct TrainingConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-4;
  int batch_size = 16;
  int max_epochs = 100;
  int early_stop_patience = 7;
  bool mixed_precision = true;
  bool gradient_checkpointing = true;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochStats {
  int epoch = 0;  ///< 1-based
  double train_accuracy = 0.0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  double val_loss = 0.0;
};

struct EarlyStoppingState {
  double best = -1.0;  ///< below any attainable accuracy
  int epochs_since_improve = 0;
};

struct EarlyStoppingUpdate {
  EarlyStoppingState state;
  bool improved = false;
  bool stop = false;
};

/// Strict improvement resets the counter; otherwise it grows and the stop
/// flag rises once it reaches `patience`.
EarlyStoppingUpdate early_stopping_update(const EarlyStoppingState& state, double current_val_accuracy, int patience);

struct FoldResult {
  int fold = 0;
  int best_epoch = 0;
  double best_val_accuracy = 0.0;
  std::vector<EpochStats> history;
  std::filesystem::path best_checkpoint;  ///< empty when no output directory was given
  std::vector<PredictionRecord> prediction_records;
  std::size_t train_size = 0;  ///< balanced training-set size
};

/// Everything a training run is configured by.
struct PipelineConfig {
  PreprocessConfig preprocess;
  AugmentConfig augment;
  BalanceConfig balance;
  ClassifierConfig model;
  TrainingConfig training;
};

struct TrainHooks {
  /// Per-fold artefacts (checkpoint, history, predictions, balanced set) go
  /// under <output_dir>/fold_<k>; nothing is written when empty.
  std::filesystem::path output_dir;
  BuildOptions build;
  std::function<cv::Mat(const std::filesystem::path&)> load_image;  ///< default: load_rgb
  std::function<void(int fold, const EpochStats&)> on_epoch;
  std::ostream* log = nullptr;
};

/// Trains one fold and returns its history plus validation predictions made
/// with the best (earliest maximal validation accuracy) weights.
/// Throws TrainingError on a non-finite loss and ResourceError when memory
/// runs out.
FoldResult train_fold(const Manifest& manifest, const FoldAssignment& folds, int fold_index,
                      const ClassTaxonomy& taxonomy, const PipelineConfig& config, const TrainHooks& hooks = {});

/// Eval-mode predictions for \`records\` (preprocess_eval, softmax, top-3).
std::vector<PredictionRecord> predict_records(const Classifier& model, std::span<const ImageRecord> records,
                                              const ClassTaxonomy& taxonomy, const PreprocessConfig& preprocess,
                                              int fold, int batch_size,
                                              const std::function<cv::Mat(const std::filesystem::path&)>& load_image);

struct CrossValidationResult {
  std::vector<FoldResult> folds;
  std::vector<MetricsReport> reports;
  std::optional<AggregateReport> aggregate;
  /// Set when a fold failed; results of earlier folds are kept.
  std::optional<int> failed_fold;
  std::string error;
};

CrossValidationResult run_cross_validation(const Manifest& manifest, const FoldAssignment& folds,
                                           const ClassTaxonomy& taxonomy, const PipelineConfig& config,
                                           const TrainHooks& hooks = {});

/// Per-epoch mean and population std across folds; folds that stopped early
/// simply drop out of later epochs.
struct HistoryBand {
  int epoch = 0;
  int n_folds = 0;
  MeanStd train_accuracy, val_accuracy, val_loss;
};
std::vector<HistoryBand> history_bands(const std::vector<FoldResult>& folds);

std::string history_to_csv(const std::vector<EpochStats>& history);
std::string bands_to_csv(const std::vector<HistoryBand>& bands);

}  // namespace habitat
