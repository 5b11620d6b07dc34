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

#include "habitat/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "habitat/errors.hpp"
#include "habitat/fs_util.hpp"

namespace habitat {

using nlohmann::json;

namespace {

double ratio(std::int64_t num, std::int64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

std::vector<LabelProbability> top_k(std::span<const double> probabilities, const ClassTaxonomy& taxonomy,
                                    std::size_t k) {
  if (probabilities.size() != taxonomy.size())
    throw ShapeError("probability vector has " + std::to_string(probabilities.size()) + " entries, taxonomy has " +
                     std::to_string(taxonomy.size()));
  std::vector<std::size_t> idx(probabilities.size());
  std::iota(idx.begin(), idx.end(), 0);
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      return probabilities[a] > probabilities[b] || (probabilities[a] == probabilities[b] && a < b);
                    });
  std::vector<LabelProbability> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back({taxonomy.at(idx[i]).abbreviation, probabilities[idx[i]]});
  return out;
}

PredictionRecord make_prediction_record(std::string image_id, std::string true_label,
                                        std::vector<double> probabilities, const ClassTaxonomy& taxonomy, int fold) {
  PredictionRecord r;
  r.image_id = std::move(image_id);
  r.true_label = std::move(true_label);
  r.top3 = top_k(probabilities, taxonomy, 3);
  r.predicted_label = r.top3.front().label;
  r.probabilities = std::move(probabilities);
  r.fold = fold;
  return r;
}

std::int64_t ConfusionMatrix::total() const {
  std::int64_t s = 0;
  for (const auto& row : counts) s = std::accumulate(row.begin(), row.end(), s);
  return s;
}

std::int64_t ConfusionMatrix::trace() const {
  std::int64_t s = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) s += counts[i][i];
  return s;
}

std::int64_t ConfusionMatrix::row_sum(std::size_t r) const {
  return std::accumulate(counts.at(r).begin(), counts.at(r).end(), std::int64_t{0});
}

std::int64_t ConfusionMatrix::column_sum(std::size_t c) const {
  std::int64_t s = 0;
  for (const auto& row : counts) s += row.at(c);
  return s;
}

ConfusionMatrix empty_confusion(const ClassTaxonomy& taxonomy) {
  ConfusionMatrix cm;
  cm.labels = taxonomy.abbreviations();
  cm.counts.assign(taxonomy.size(), std::vector<std::int64_t>(taxonomy.size(), 0));
  cm.taxonomy_version = taxonomy.version();
  return cm;
}

ConfusionMatrix confusion_matrix(std::span<const PredictionRecord> records, const ClassTaxonomy& taxonomy) {
  ConfusionMatrix cm = empty_confusion(taxonomy);
  for (const auto& r : records) {
    const auto t = taxonomy.find(r.true_label);
    const auto p = taxonomy.find(r.predicted_label);
    if (!t || !p)
      throw ValidationError("record '" + r.image_id + "' has a label outside taxonomy " + taxonomy.version() + " ('" +
                            (t ? r.predicted_label : r.true_label) + "')");
    ++cm.counts[*t][*p];
  }
  return cm;
}

std::vector<ClassMetrics> per_class_metrics(const ConfusionMatrix& cm) {
  const std::int64_t total = cm.total();
  std::vector<ClassMetrics> out(cm.size());
  for (std::size_t c = 0; c < cm.size(); ++c) {
    auto& m = out[c];
    m.tp = cm.counts[c][c];
    m.fp = cm.column_sum(c) - m.tp;
    m.fn = cm.row_sum(c) - m.tp;
    m.tn = total - m.tp - m.fp - m.fn;
    m.support = m.tp + m.fn;
    m.precision = ratio(m.tp, m.tp + m.fp);
    m.recall = ratio(m.tp, m.tp + m.fn);
    m.f1 = (m.precision + m.recall) == 0.0 ? 0.0 : 2.0 * m.precision * m.recall / (m.precision + m.recall);
    m.accuracy = ratio(m.tp + m.tn, total);
  }
  return out;
}

double topk_accuracy(std::span<const PredictionRecord> records, int k) {
  if (records.empty()) throw ValidationError("top-k accuracy of an empty record set is undefined");
  if (k < 1 || k > 3) throw ValidationError("k must be 1, 2 or 3");
  std::size_t hits = 0;
  for (const auto& r : records) {
    if (k == 1) {
      hits += r.predicted_label == r.true_label;
      continue;
    }
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(k), r.top3.size());
    hits += std::any_of(r.top3.begin(), r.top3.begin() + static_cast<std::ptrdiff_t>(n),
                        [&](const LabelProbability& lp) { return lp.label == r.true_label; });
  }
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

double cross_entropy(std::span<const double> probabilities, std::size_t true_index) {
  if (true_index >= probabilities.size()) throw ValidationError("cross-entropy: true index out of range");
  return -std::log(std::max(probabilities[true_index], kProbabilityFloor));
}

MetricsReport build_report(std::span<const PredictionRecord> records, const ClassTaxonomy& taxonomy) {
  MetricsReport rep;
  rep.taxonomy_version = taxonomy.version();
  rep.labels = taxonomy.abbreviations();
  rep.confusion = confusion_matrix(records, taxonomy);
  rep.n_records = records.size();
  const auto metrics = per_class_metrics(rep.confusion);
  double f1_sum = 0.0, acc_sum = 0.0;
  for (std::size_t c = 0; c < metrics.size(); ++c) {
    rep.per_class[rep.labels[c]] = metrics[c];
    f1_sum += metrics[c].f1;
    acc_sum += metrics[c].accuracy;
  }
  rep.mean_f1 = metrics.empty() ? 0.0 : f1_sum / static_cast<double>(metrics.size());
  rep.mean_ovr_accuracy = metrics.empty() ? 0.0 : acc_sum / static_cast<double>(metrics.size());
  if (!records.empty()) {
    rep.top1_accuracy = topk_accuracy(records, 1);
    rep.top3_accuracy = topk_accuracy(records, 3);
    rep.overall_accuracy = rep.top1_accuracy;
    double loss = 0.0;
    std::size_t with_probs = 0;
    for (const auto& r : records) {
      if (r.probabilities.size() != taxonomy.size()) continue;
      loss += cross_entropy(r.probabilities, taxonomy.index_of(r.true_label));
      ++with_probs;
    }
    rep.val_loss = with_probs ? loss / static_cast<double>(with_probs) : 0.0;
  }
  return rep;
}

MeanStd mean_std(std::span<const double> values) {
  if (values.empty()) return {};
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);
  return {mean, std::sqrt(sq / n)};
}

AggregateReport aggregate_folds(std::span<const MetricsReport> reports) {
  if (reports.empty()) throw ValidationError("aggregate_folds: no reports");
  AggregateReport agg;
  agg.taxonomy_version = reports[0].taxonomy_version;
  agg.labels = reports[0].labels;
  agg.n_reports = reports.size();
  agg.confusion = reports[0].confusion;
  for (std::size_t i = 1; i < reports.size(); ++i) {
    const auto& r = reports[i];
    if (r.taxonomy_version != agg.taxonomy_version || r.labels != agg.labels)
      throw ValidationError("aggregate_folds: report " + std::to_string(i) + " uses taxonomy " + r.taxonomy_version +
                            ", expected " + agg.taxonomy_version);
    for (std::size_t a = 0; a < agg.confusion.size(); ++a)
      for (std::size_t b = 0; b < agg.confusion.size(); ++b) agg.confusion.counts[a][b] += r.confusion.counts[a][b];
  }
  const auto collect = [&](auto field) {
    std::vector<double> v;
    for (const auto& r : reports) v.push_back(field(r));
    return mean_std(v);
  };
  agg.overall_accuracy = collect([](const MetricsReport& r) { return r.overall_accuracy; });
  agg.top1_accuracy = collect([](const MetricsReport& r) { return r.top1_accuracy; });
  agg.top3_accuracy = collect([](const MetricsReport& r) { return r.top3_accuracy; });
  agg.mean_f1 = collect([](const MetricsReport& r) { return r.mean_f1; });
  agg.val_loss = collect([](const MetricsReport& r) { return r.val_loss; });
  for (const auto& label : agg.labels) {
    ClassAggregate& ca = agg.per_class[label];
    ca.precision = collect([&](const MetricsReport& r) { return r.per_class.at(label).precision; });
    ca.recall = collect([&](const MetricsReport& r) { return r.per_class.at(label).recall; });
    ca.f1 = collect([&](const MetricsReport& r) { return r.per_class.at(label).f1; });
  }
  return agg;
}

std::string export_prediction_log(std::span<const PredictionRecord> records) {
  std::string out;
  for (const auto& r : records) {
    json top = json::array();
    for (const auto& lp : r.top3) top.push_back({lp.label, lp.probability});
    const json j = {{"image_id", r.image_id},      {"fold", r.fold}, {"true_label", r.true_label},
                    {"predicted_label", r.predicted_label}, {"top3", top}, {"probabilities", r.probabilities}};
    out += j.dump() + "\n";
  }
  return out;
}

std::vector<PredictionRecord> import_prediction_log(std::string_view text) {
  std::vector<PredictionRecord> out;
  const auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].find_first_not_of(" \t") == std::string::npos) continue;
    try {
      const json j = json::parse(lines[i]);
      PredictionRecord r;
      r.image_id = j.at("image_id").get<std::string>();
      r.fold = j.at("fold").get<int>();
      r.true_label = j.at("true_label").get<std::string>();
      r.predicted_label = j.at("predicted_label").get<std::string>();
      for (const auto& e : j.at("top3")) r.top3.push_back({e.at(0).get<std::string>(), e.at(1).get<double>()});
      if (j.contains("probabilities")) r.probabilities = j["probabilities"].get<std::vector<double>>();
      if (r.top3.empty()) throw ParseError("prediction log: empty top3", i + 1);
      if (r.top3.front().label != r.predicted_label)
        throw ParseError("prediction log: predicted_label differs from top3[0]", i + 1);
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ParseError(std::string("prediction log: ") + e.what(), i + 1);
    }
  }
  return out;
}

void save_prediction_log(const std::filesystem::path& path, std::span<const PredictionRecord> records) {
  write_file_atomic(path, export_prediction_log(records));
}

std::vector<PredictionRecord> load_prediction_log(const std::filesystem::path& path) {
  return import_prediction_log(read_file(path));
}

}  // namespace habitat
