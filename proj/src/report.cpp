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

#include "habitat/report.hpp"

#include <algorithm>
#include <cstdio>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "habitat/errors.hpp"

namespace habitat {

using nlohmann::json;

namespace {

json class_json(const ClassMetrics& m) {
  return {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1},   {"accuracy", m.accuracy},
          {"tp", m.tp},               {"fp", m.fp},         {"fn", m.fn},   {"tn", m.tn},
          {"support", m.support}};
}

json ms(const MeanStd& v) {
  return {{"mean", v.mean}, {"std", v.std}};
}

json confusion_json(const ConfusionMatrix& cm) {
  return {{"labels", cm.labels}, {"counts", cm.counts}, {"taxonomy_version", cm.taxonomy_version}};
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Pads to w display columns; UTF-8 continuation bytes take no column.
std::string pad(std::string s, std::size_t w) {
  const auto cols = static_cast<std::size_t>(
      std::count_if(s.begin(), s.end(), [](char c) { return (static_cast<unsigned char>(c) & 0xC0) != 0x80; }));
  if (cols < w) s.append(w - cols, ' ');
  return s;
}

std::string class_name(const ClassTaxonomy& taxonomy, const std::string& abbr) {
  const auto i = taxonomy.find(abbr);
  return i ? taxonomy.at(*i).name + " (" + abbr + ")" : abbr;
}

}  // namespace

json report_to_json(const MetricsReport& r) {
  json per = json::object();
  for (const auto& [label, m] : r.per_class) per[label] = class_json(m);
  return {{"taxonomy_version", r.taxonomy_version},
          {"n_records", r.n_records},
          {"overall_accuracy", r.overall_accuracy},
          {"top1_accuracy", r.top1_accuracy},
          {"top3_accuracy", r.top3_accuracy},
          {"mean_f1", r.mean_f1},
          {"mean_ovr_accuracy", r.mean_ovr_accuracy},
          {"val_loss", r.val_loss},
          {"per_class", per},
          {"confusion", confusion_json(r.confusion)}};
}

json aggregate_to_json(const AggregateReport& a) {
  json per = json::object();
  for (const auto& [label, c] : a.per_class)
    per[label] = {{"precision", ms(c.precision)}, {"recall", ms(c.recall)}, {"f1", ms(c.f1)}};
  return {{"taxonomy_version", a.taxonomy_version},
          {"n_reports", a.n_reports},
          {"overall_accuracy", ms(a.overall_accuracy)},
          {"top1_accuracy", ms(a.top1_accuracy)},
          {"top3_accuracy", ms(a.top3_accuracy)},
          {"mean_f1", ms(a.mean_f1)},
          {"val_loss", ms(a.val_loss)},
          {"per_class", per},
          {"confusion", confusion_json(a.confusion)}};
}

std::string format_report_table(const MetricsReport& r, const ClassTaxonomy& taxonomy) {
  std::size_t w = 5;
  for (const auto& l : r.labels) w = std::max(w, class_name(taxonomy, l).size());
  std::string out = pad("Class", w) + "  Precision  Recall  F1-score  Support\n";
  for (const auto& l : r.labels) {
    const auto& m = r.per_class.at(l);
    out += pad(class_name(taxonomy, l), w) + "  " + pad(fmt("%.2f", m.precision), 9) + "  " +
           pad(fmt("%.2f", m.recall), 6) + "  " + pad(fmt("%.2f", m.f1), 8) + "  " + std::to_string(m.support) + "\n";
  }
  out += "\nrecords: " + std::to_string(r.n_records) + "\n";
  out += "top-1 accuracy: " + fmt("%.4f", r.top1_accuracy) + "\n";
  out += "top-3 accuracy: " + fmt("%.4f", r.top3_accuracy) + "\n";
  out += "mean F1: " + fmt("%.4f", r.mean_f1) + "\n";
  out += "validation loss: " + fmt("%.4f", r.val_loss) + "\n";
  return out;
}

std::string format_aggregate_table(const AggregateReport& a, const ClassTaxonomy& taxonomy) {
  const auto pm = [](const MeanStd& v) { return fmt("%.2f", v.mean) + " ± " + fmt("%.2f", v.std); };
  std::size_t w = 5;
  for (const auto& l : a.labels) w = std::max(w, class_name(taxonomy, l).size());
  std::string out = pad("Class", w) + "  Precision    Recall       F1-score\n";
  for (const auto& l : a.labels) {
    const auto& c = a.per_class.at(l);
    out += pad(class_name(taxonomy, l), w) + "  " + pad(pm(c.precision), 13) + pad(pm(c.recall), 13) + pm(c.f1) + "\n";
  }
  out += "\nfolds: " + std::to_string(a.n_reports) + "\n";
  out += "top-1 accuracy: " + pm(a.top1_accuracy) + "\n";
  out += "top-3 accuracy: " + pm(a.top3_accuracy) + "\n";
  out += "mean F1: " + pm(a.mean_f1) + "\n";
  out += "validation loss: " + pm(a.val_loss) + "\n";
  return out;
}

std::string confusion_to_csv(const ConfusionMatrix& cm) {
  std::string out = "true\\predicted";
  for (const auto& l : cm.labels) out += "," + l;
  out += "\n";
  for (std::size_t r = 0; r < cm.size(); ++r) {
    out += cm.labels[r];
    for (auto v : cm.counts[r]) out += "," + std::to_string(v);
    out += "\n";
  }
  return out;
}

void write_confusion_heatmap(const std::filesystem::path& path, const ConfusionMatrix& cm) {
  const int k = static_cast<int>(cm.size());
  if (k == 0) throw ValidationError("cannot plot an empty confusion matrix");
  constexpr int cell = 40, margin = 70;
  const int side = margin + k * cell + 10;
  cv::Mat canvas(side, side, CV_8UC3, cv::Scalar::all(255));
  cv::Mat level(1, 256, CV_8UC1);
  for (int i = 0; i < 256; ++i) level.at<uchar>(i) = static_cast<uchar>(i);
  cv::Mat colours;
  cv::applyColorMap(level, colours, cv::COLORMAP_VIRIDIS);
  const auto font = cv::FONT_HERSHEY_SIMPLEX;
  for (int r = 0; r < k; ++r) {
    const double row = static_cast<double>(cm.row_sum(static_cast<std::size_t>(r)));
    for (int c = 0; c < k; ++c) {
      const auto count = cm.counts[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
      const double frac = row > 0 ? static_cast<double>(count) / row : 0.0;
      const cv::Vec3b bgr = colours.at<cv::Vec3b>(0, static_cast<int>(frac * 255.0 + 0.5));
      const cv::Rect box(margin + c * cell, margin + r * cell, cell, cell);
      cv::rectangle(canvas, box, cv::Scalar(bgr[0], bgr[1], bgr[2]), cv::FILLED);
      const cv::Scalar ink = frac > 0.5 ? cv::Scalar::all(0) : cv::Scalar::all(255);
      cv::putText(canvas, std::to_string(count), {box.x + 4, box.y + cell / 2 + 5}, font, 0.38, ink, 1, cv::LINE_AA);
    }
    cv::putText(canvas, cm.labels[static_cast<std::size_t>(r)], {4, margin + r * cell + cell / 2 + 5}, font, 0.4,
                cv::Scalar::all(0), 1, cv::LINE_AA);
  }
  for (int c = 0; c < k; ++c)
    cv::putText(canvas, cm.labels[static_cast<std::size_t>(c)], {margin + c * cell + 2, margin - 8}, font, 0.35,
                cv::Scalar::all(0), 1, cv::LINE_AA);
  cv::putText(canvas, "true \\ predicted", {4, 20}, font, 0.45, cv::Scalar::all(0), 1, cv::LINE_AA);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), canvas)) throw Error("cannot write heatmap " + path.string());
}

}  // namespace habitat
