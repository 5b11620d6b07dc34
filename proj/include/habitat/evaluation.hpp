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
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "habitat/taxonomy.hpp"

namespace habitat {

struct LabelProbability {
  std::string label;
  double probability = 0.0;
  bool operator==(const LabelProbability&) const = default;
};

struct PredictionRecord {
  std::string image_id;
  std::string true_label;
  std::string predicted_label;
  std::vector<double> probabilities;  ///< taxonomy order; may be empty in imported logs
  std::vector<LabelProbability> top3;  ///< min(3, K) entries, descending
  int fold = 0;

  bool operator==(const PredictionRecord&) const = default;
};

/// The k largest probabilities in descending order; equal values keep the
/// lower class index first.
std::vector<LabelProbability> top_k(std::span<const double> probabilities, const ClassTaxonomy& taxonomy,
                                    std::size_t k);

PredictionRecord make_prediction_record(std::string image_id, std::string true_label,
                                        std::vector<double> probabilities, const ClassTaxonomy& taxonomy, int fold);

struct ConfusionMatrix {
  std::vector<std::string> labels;
  std::vector<std::vector<std::int64_t>> counts;  ///< [true][predicted]
  std::string taxonomy_version;

  std::size_t size() const noexcept { return labels.size(); }
  std::int64_t total() const;
  std::int64_t trace() const;
  std::int64_t row_sum(std::size_t r) const;
  std::int64_t column_sum(std::size_t c) const;
};

ConfusionMatrix empty_confusion(const ClassTaxonomy& taxonomy);
/// Throws ValidationError when a record names a label outside the taxonomy.
ConfusionMatrix confusion_matrix(std::span<const PredictionRecord> records, const ClassTaxonomy& taxonomy);

struct ClassMetrics {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::int64_t support = 0;  ///< true instances (TP + FN)
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;  ///< one-vs-rest (TP + TN) / total
};

/// One-vs-rest metrics per class, in matrix order. A ratio with a zero
/// denominator is reported as 0.
std::vector<ClassMetrics> per_class_metrics(const ConfusionMatrix& cm);

/// Fraction of records whose true label is among the first k entries of
/// top3 (k = 1 compares against predicted_label). Throws ValidationError for
/// empty input or k outside {1, 2, 3}.
double topk_accuracy(std::span<const PredictionRecord> records, int k);

inline constexpr double kProbabilityFloor = 1e-12;

/// -log(max(p_true, 1e-12)).
double cross_entropy(std::span<const double> probabilities, std::size_t true_index);

struct MetricsReport {
  std::string taxonomy_version;
  std::vector<std::string> labels;
  std::map<std::string, ClassMetrics> per_class;
  double overall_accuracy = 0.0;
  double top1_accuracy = 0.0;
  double top3_accuracy = 0.0;
  double mean_f1 = 0.0;          ///< macro mean over all classes
  double mean_ovr_accuracy = 0.0;
  double val_loss = 0.0;         ///< mean cross-entropy; 0 when probabilities are absent
  std::size_t n_records = 0;
  ConfusionMatrix confusion;
};

MetricsReport build_report(std::span<const PredictionRecord> records, const ClassTaxonomy& taxonomy);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

struct ClassAggregate {
  MeanStd precision, recall, f1;
};

struct AggregateReport {
  std::string taxonomy_version;
  std::vector<std::string> labels;
  std::size_t n_reports = 0;
  MeanStd overall_accuracy, top1_accuracy, top3_accuracy, mean_f1, val_loss;
  std::map<std::string, ClassAggregate> per_class;
  ConfusionMatrix confusion;  ///< summed over reports
};

/// Arithmetic mean and population standard deviation.
MeanStd mean_std(std::span<const double> values);

/// Throws ValidationError for no reports or differing taxonomies.
AggregateReport aggregate_folds(std::span<const MetricsReport> reports);

/// One JSON object per line: image_id, fold, true_label, predicted_label,
/// top3 [[label, p], ...] and probabilities.
std::string export_prediction_log(std::span<const PredictionRecord> records);
/// Throws ParseError naming the offending line.
std::vector<PredictionRecord> import_prediction_log(std::string_view text);
void save_prediction_log(const std::filesystem::path& path, std::span<const PredictionRecord> records);
std::vector<PredictionRecord> load_prediction_log(const std::filesystem::path& path);

}  // namespace habitat
