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

#include <filesystem>
#include <string>

#include <json.hpp>

#include "habitat/evaluation.hpp"

namespace habitat {

nlohmann::json report_to_json(const MetricsReport& report);
nlohmann::json aggregate_to_json(const AggregateReport& aggregate);

/// Plain-text table: Class, Precision, Recall, F1-score, Support, followed
/// by the summary accuracies.
std::string format_report_table(const MetricsReport& report, const ClassTaxonomy& taxonomy);
/// Same columns as mean ± std across folds.
std::string format_aggregate_table(const AggregateReport& aggregate, const ClassTaxonomy& taxonomy);

std::string confusion_to_csv(const ConfusionMatrix& cm);

/// Row-normalised heatmap with class labels, written as PNG.
void write_confusion_heatmap(const std::filesystem::path& path, const ConfusionMatrix& cm);

}  // namespace habitat
