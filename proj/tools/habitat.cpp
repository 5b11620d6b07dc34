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

// habitat: command-line entry point for ingest, split, train, eval, report,
// serve, predict and synth.

#include <csignal>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <regex>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "habitat/checkpoint.hpp"
#include "habitat/csv.hpp"
#include "habitat/dataset.hpp"
#include "habitat/errors.hpp"
#include "habitat/evaluation.hpp"
#include "habitat/fs_util.hpp"
#include "habitat/image_io.hpp"
#include "habitat/nn/loss.hpp"
#include "habitat/report.hpp"
#include "habitat/service.hpp"
#include "habitat/synthetic.hpp"
#include "habitat/training.hpp"

namespace fs = std::filesystem;
using namespace habitat;
using nlohmann::json;

namespace {

struct Options {
  std::uint64_t seed = 0;
  std::string taxonomy;

  // ingest
  std::string root, manifest_out = "manifest.jsonl", metadata_file = "metadata.csv";
  unsigned threads = 0;

  // split
  std::string manifest, folds_out = "folds.json";
  int n_folds = 5;

  // train
  std::string folds, output_dir = "runs", weights_dir;
  int fold = -1;
  PipelineConfig pipeline;
  bool no_early_stopping = false;

  // eval / report
  std::vector<std::string> predictions;
  std::string eval_out = "eval", run_dir;

  // serve / predict
  ServiceConfig service;
  double max_upload_mb = 20.0;
  long session_ttl_s = 3600;
  double log_rotate_mb = 50.0;
  std::string checkpoint;
  std::vector<std::string> images;

  // synth
  std::string synth_out = "synthetic";
  SyntheticSpec synth;
};


std::string utc_stamp() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

std::vector<double> parse_triplet(const std::vector<double>& v, const char* what) {
  if (v.size() != 3) throw ConfigError(std::string(what) + " needs three comma-separated values");
  return v;
}

int cmd_ingest(const Options& o) {
  const ClassTaxonomy tax = load_taxonomy_or_default(o.taxonomy);
  IngestOptions io;
  io.metadata_file = o.metadata_file;
  io.threads = o.threads;
  const IngestResult r = ingest_directory(o.root, tax, io);
  save_manifest(o.manifest_out, r.manifest);
  for (const auto& s : r.skipped) std::cerr << "skipped " << s.path.string() << ": " << s.reason << "\n";
  std::cout << "wrote " << o.manifest_out << " (" << r.manifest.size() << " records, " << r.skipped.size()
            << " skipped)\n";
  for (const auto& [label, n] : r.manifest.per_class_counts()) std::cout << "  " << label << " " << n << "\n";
  return 0;
}

int cmd_split(const Options& o) {
  const Manifest m = load_manifest(o.manifest);
  const FoldAssignment f = stratified_kfold_split(m, o.n_folds, derive_seed(o.seed, "split"));
  save_folds(o.folds_out, f);
  std::cout << "wrote " << o.folds_out << " (" << f.n_folds << " folds over " << f.assignment.size() << " records)\n";
  return 0;
}

int cmd_train(const Options& o, const std::string& effective_config) {
  const ClassTaxonomy tax = load_taxonomy_or_default(o.taxonomy);
  const Manifest m = load_manifest(o.manifest);
  const FoldAssignment f = load_folds(o.folds);

  PipelineConfig pc = o.pipeline;
  pc.model.n_classes = static_cast<int>(tax.size());
  pc.model.input_size = pc.preprocess.target_size;
  pc.augment.seed = derive_seed(o.seed, "augment");
  pc.balance.seed = derive_seed(o.seed, "balance");
  pc.training.seed = derive_seed(o.seed, "train");
  if (o.no_early_stopping) pc.training.early_stop_patience = kNoEarlyStopping;

  const fs::path run = fs::path(o.output_dir) / ("run_" + utc_stamp() + "_seed" + std::to_string(o.seed));
  fs::create_directories(run);
  write_file_atomic(run / "config.toml", effective_config);
  write_file_atomic(run / "taxonomy.json", taxonomy_to_json(tax));
  std::ofstream log(run / "train.log");
  log << effective_config << std::flush;
  std::cout << "run directory: " << run.string() << "\n";

  struct Tee : std::streambuf {
    std::streambuf *a, *b;
    int overflow(int c) override {
      if (c == EOF) return !EOF;
      a->sputc(static_cast<char>(c));
      b->sputc(static_cast<char>(c));
      return c;
    }
    int sync() override { return a->pubsync() | b->pubsync(); }
  } tee;
  tee.a = std::cout.rdbuf();
  tee.b = log.rdbuf();
  std::ostream out(&tee);

  TrainHooks hooks;
  hooks.output_dir = run;
  hooks.build.weights_dir = o.weights_dir;
  hooks.log = &out;

  if (o.fold >= 0) {
    const FoldResult r = train_fold(m, f, o.fold, tax, pc, hooks);
    out << "fold " << r.fold << ": best epoch " << r.best_epoch << ", val accuracy " << r.best_val_accuracy
        << ", checkpoint " << r.best_checkpoint.string() << std::endl;
    return 0;
  }
  const CrossValidationResult cv = run_cross_validation(m, f, tax, pc, hooks);
  for (const auto& r : cv.folds)
    out << "fold " << r.fold << ": best epoch " << r.best_epoch << ", val accuracy " << r.best_val_accuracy
        << ", checkpoint " << r.best_checkpoint.string() << std::endl;
  if (cv.aggregate) out << format_aggregate_table(*cv.aggregate, tax) << std::flush;
  if (cv.failed_fold) {
    std::cerr << "error: " << cv.error << " (results of " << cv.folds.size() << " earlier folds kept in "
              << run.string() << ")\n";
    return 1;
  }
  return 0;
}

void write_eval_outputs(const fs::path& dir, const std::vector<PredictionRecord>& records, const ClassTaxonomy& tax) {
  fs::create_directories(dir);
  std::map<int, std::vector<PredictionRecord>> by_fold;
  for (const auto& r : records) by_fold[r.fold].push_back(r);
  const MetricsReport pooled = build_report(records, tax);
  json out = report_to_json(pooled);
  std::string table = format_report_table(pooled, tax);
  if (by_fold.size() > 1) {
    std::vector<MetricsReport> reports;
    for (const auto& [fold, recs] : by_fold) reports.push_back(build_report(recs, tax));
    const AggregateReport agg = aggregate_folds(reports);
    out["across_folds"] = aggregate_to_json(agg);
    table += "\nAcross " + std::to_string(agg.n_reports) + " folds\n" + format_aggregate_table(agg, tax);
  }
  write_file_atomic(dir / "metrics.json", out.dump(2) + "\n");
  write_file_atomic(dir / "metrics.txt", table);
  write_file_atomic(dir / "confusion.csv", confusion_to_csv(pooled.confusion));
  write_confusion_heatmap(dir / "confusion.png", pooled.confusion);
  std::cout << table;
  std::cout << "wrote " << (dir / "metrics.json").string() << ", metrics.txt, confusion.csv, confusion.png\n";
}

int cmd_eval(const Options& o) {
  const ClassTaxonomy tax = load_taxonomy_or_default(o.taxonomy);
  std::vector<PredictionRecord> all;
  for (const auto& p : o.predictions) {
    auto recs = load_prediction_log(p);
    all.insert(all.end(), recs.begin(), recs.end());
  }
  if (all.empty()) throw ValidationError("no prediction records found");
  write_eval_outputs(o.eval_out, all, tax);
  return 0;
}

int cmd_report(const Options& o) {
  const fs::path run = o.run_dir;
  // A run records the taxonomy it was trained with; --taxonomy overrides it.
  const ClassTaxonomy tax = o.taxonomy.empty() && fs::exists(run / "taxonomy.json")
                                ? load_taxonomy(run / "taxonomy.json")
                                : load_taxonomy_or_default(o.taxonomy);
  std::vector<FoldResult> folds;
  std::vector<PredictionRecord> all;
  const std::regex fold_dir("fold_([0-9]+)");
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(run))
    if (e.is_directory() && std::regex_match(e.path().filename().string(), fold_dir)) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw ValidationError("no fold_* directories under " + run.string());
  for (const auto& d : dirs) {
    FoldResult fr;
    fr.fold = std::stoi(d.filename().string().substr(5));
    if (fs::exists(d / "predictions.jsonl")) fr.prediction_records = load_prediction_log(d / "predictions.jsonl");
    if (fs::exists(d / "history.csv")) {
      const auto lines = split_lines(read_file(d / "history.csv"));
      for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const auto f = csv::parse_line(lines[i], i + 1);
        if (f.size() < 4) throw ParseError("history.csv: expected at least 4 columns", i + 1);
        EpochStats s;
        s.epoch = std::stoi(f[0]);
        s.train_accuracy = std::stod(f[1]);
        s.val_accuracy = std::stod(f[2]);
        s.val_loss = std::stod(f[3]);
        if (f.size() > 4) s.train_loss = std::stod(f[4]);
        fr.history.push_back(s);
      }
    }
    all.insert(all.end(), fr.prediction_records.begin(), fr.prediction_records.end());
    folds.push_back(std::move(fr));
  }
  const fs::path out = run / "report";
  fs::create_directories(out);
  write_file_atomic(out / "history_bands.csv", bands_to_csv(history_bands(folds)));
  write_eval_outputs(out, all, tax);
  return 0;
}

volatile std::sig_atomic_t g_stop = 0;

int cmd_serve(Options o) {
  ServiceConfig& sc = o.service;
  sc.taxonomy = o.taxonomy;
  sc.max_upload_bytes = static_cast<std::size_t>(o.max_upload_mb * 1024.0 * 1024.0);
  sc.session_ttl = std::chrono::seconds(o.session_ttl_s);
  sc.log_rotate_bytes = static_cast<std::uint64_t>(o.log_rotate_mb * 1024.0 * 1024.0);
  InferenceService service(sc);
  const int port = service.bind();
  std::cout << "serving on http://" << sc.host << ":" << port << " (model "
            << (service.has_model() ? service.model_version() : std::string("none")) << ")" << std::endl;
  service.start();
  std::signal(SIGINT, [](int) { g_stop = 1; });
  std::signal(SIGTERM, [](int) { g_stop = 1; });
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(200));
  service.stop();
  return 0;
}

int cmd_predict(const Options& o) {
  const ClassTaxonomy tax = load_taxonomy_or_default(o.taxonomy);
  const LoadedCheckpoint ck = load_checkpoint(o.checkpoint, &tax);
  PreprocessConfig pre;
  pre.target_size = ck.model->config().input_size;
  for (const auto& img : o.images) {
    nn::Tensor x = preprocess_eval(load_rgb(img), pre);
    const auto s = x.shape();
    const auto probs = nn::softmax_rows(ck.model->predict(std::move(x).reshaped({1, s[0], s[1], s[2]})));
    json top = json::array();
    for (const auto& lp : top_k(probs[0], tax, 3)) top.push_back({{"label", lp.label}, {"probability", lp.probability}});
    std::cout << json{{"image", img}, {"model_version", ck.meta.model_version}, {"top3", top}}.dump() << "\n";
  }
  return 0;
}

int cmd_synth(const Options& o) {
  const std::size_t n = write_color_dataset(o.synth_out, o.synth);
  std::cout << "wrote " << n << " images and taxonomy.json under " << o.synth_out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Habitat image classification toolkit"};
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "TOML config file; command-line flags take precedence");
  app.require_subcommand(1);
  Options o;
  app.add_option("--seed", o.seed, "Base seed; every random component derives its own stream from it");
  app.add_option("--taxonomy", o.taxonomy, "Taxonomy JSON file (default: built-in 18-class set)");

  auto* ingest = app.add_subcommand("ingest", "Scan <root>/<class>/ image folders into a manifest");
  ingest->add_option("--root", o.root, "Dataset root")->required()->check(CLI::ExistingDirectory);
  ingest->add_option("--out", o.manifest_out, "Manifest output path");
  ingest->add_option("--metadata-file", o.metadata_file, "Optional per-image metadata CSV under the root");
  ingest->add_option("--threads", o.threads, "Decoder threads (0 = all cores)");

  auto* split = app.add_subcommand("split", "Stratified k-fold assignment");
  split->add_option("--manifest", o.manifest, "Manifest file")->required()->check(CLI::ExistingFile);
  split->add_option("--folds", o.n_folds, "Number of folds")->check(CLI::PositiveNumber);
  split->add_option("--out", o.folds_out, "Fold assignment output path");

  auto* train = app.add_subcommand("train", "Cross-validated training");
  auto& pc = o.pipeline;
  std::vector<double> means(pc.preprocess.channel_means.begin(), pc.preprocess.channel_means.end());
  std::vector<double> stds(pc.preprocess.channel_stds.begin(), pc.preprocess.channel_stds.end());
  train->add_option("--manifest", o.manifest, "Manifest file")->required()->check(CLI::ExistingFile);
  train->add_option("--folds", o.folds, "Fold assignment file")->required()->check(CLI::ExistingFile);
  train->add_option("--fold", o.fold, "Train a single fold (default: all)");
  train->add_option("--output-dir", o.output_dir, "Parent of the run directory");
  train->add_option("--weights-dir", o.weights_dir, "Directory with pretrained <backbone>.hwt files");
  train->add_option("--input-size", pc.preprocess.target_size, "Square input size in pixels");
  train->add_option("--mean", means, "Normalisation means (r,g,b)")->delimiter(',')->expected(3);
  train->add_option("--std", stds, "Normalisation standard deviations (r,g,b)")->delimiter(',')->expected(3);
  train->add_option("--flip-prob", pc.augment.horizontal_flip_prob, "Horizontal flip probability");
  train->add_option("--rotation-degrees", pc.augment.rotation_degrees, "Maximum random rotation");
  train->add_option("--brightness", pc.augment.color_jitter.brightness, "Colour jitter brightness");
  train->add_option("--contrast", pc.augment.color_jitter.contrast, "Colour jitter contrast");
  train->add_option("--saturation", pc.augment.color_jitter.saturation, "Colour jitter saturation");
  train->add_option("--hue", pc.augment.color_jitter.hue, "Colour jitter hue");
  train->add_option("--autoaugment", pc.augment.use_autoaugment_policy, "Apply the ImageNet AutoAugment policy");
  train->add_option("--target-per-class", pc.balance.target_per_class, "Balanced training images per class");
  train->add_option("--backbone", pc.model.backbone, "Backbone identifier");
  train->add_option("--pretrained", pc.model.pretrained, "Start from pretrained backbone weights");
  train->add_option("--dropout", pc.model.dropout_rate, "Dropout rate before the classifier");
  train->add_option("--learning-rate", pc.training.learning_rate, "AdamW learning rate");
  train->add_option("--weight-decay", pc.training.weight_decay, "AdamW decoupled weight decay");
  train->add_option("--batch-size", pc.training.batch_size, "Batch size");
  train->add_option("--max-epochs", pc.training.max_epochs, "Maximum epochs per fold");
  train->add_option("--patience", pc.training.early_stop_patience, "Early stopping patience (epochs)");
  train->add_flag("--no-early-stopping", o.no_early_stopping, "Disable early stopping");
  train->add_option("--mixed-precision", pc.training.mixed_precision, "bfloat16 convolution operands");
  train->add_option("--gradient-checkpointing", pc.training.gradient_checkpointing, "Recompute activations in backward");

  auto* eval = app.add_subcommand("eval", "Metrics report and confusion heatmap from prediction logs");
  eval->add_option("predictions", o.predictions, "Prediction log files")->required()->check(CLI::ExistingFile);
  eval->add_option("--out", o.eval_out, "Output directory");

  auto* report = app.add_subcommand("report", "Rebuild the cross-fold report of a training run");
  report->add_option("run_dir", o.run_dir, "Run directory")->required()->check(CLI::ExistingDirectory);

  auto* serve = app.add_subcommand("serve", "HTTP inference and feedback service");
  auto& sc = o.service;
  serve->add_option("--checkpoint", sc.checkpoint, "Checkpoint to serve")->check(CLI::ExistingFile);
  serve->add_option("--host", sc.host, "Listen address");
  serve->add_option("--port", sc.port, "Listen port (0 = any)");
  serve->add_option("--max-upload-mb", o.max_upload_mb, "Per-file upload limit in MiB");
  serve->add_option("--data-dir", sc.data_dir, "Root for sessions, retention and logs");
  serve->add_option("--retention-dir", sc.retention_dir, "Where consented images are kept");
  serve->add_option("--log-dir", sc.log_dir, "Feedback log directory");
  serve->add_option("--session-ttl", o.session_ttl_s, "Seconds an upload stays available for feedback");
  serve->add_option("--log-rotate-mb", o.log_rotate_mb, "Feedback log rotation size in MiB");
  serve->add_option("--token", sc.auth_token, "Shared bearer token")->envname("HABITAT_SERVICE_TOKEN");
  serve->add_option("--cors-origin", sc.cors_origin, "Access-Control-Allow-Origin value");
  serve->add_option("--static-dir", sc.static_dir, "Directory served at / (e.g. a built web UI)");

  auto* predict = app.add_subcommand("predict", "Top-3 predictions for image files");
  predict->add_option("--checkpoint", o.checkpoint, "Checkpoint")->required()->check(CLI::ExistingFile);
  predict->add_option("images", o.images, "Image files")->required()->check(CLI::ExistingFile);

  auto* synth = app.add_subcommand("synth", "Write the two-class colour test dataset");
  synth->add_option("--out", o.synth_out, "Output directory");
  synth->add_option("--per-class", o.synth.per_class, "Images per class")->check(CLI::PositiveNumber);
  synth->add_option("--size", o.synth.image_size, "Image side length")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    o.synth.seed = derive_seed(o.seed, "synthetic");
    const auto m = parse_triplet(means, "--mean");
    const auto s = parse_triplet(stds, "--std");
    std::copy(m.begin(), m.end(), pc.preprocess.channel_means.begin());
    std::copy(s.begin(), s.end(), pc.preprocess.channel_stds.begin());
    std::string effective;
    {
      const CLI::App* active = app.get_subcommands().front();
      const std::string prefix = active->get_name() + ".";
      std::istringstream all(app.config_to_str(true, false));
      for (std::string line; std::getline(all, line);) {
        const auto eq = line.find('=');
        const auto key = line.substr(0, eq);
        if (key.find('.') == std::string::npos || key.rfind(prefix, 0) == 0) effective += line + "\n";
      }
    }
    std::cout << "# effective configuration\n" << effective << std::flush;

    if (ingest->parsed()) return cmd_ingest(o);
    if (split->parsed()) return cmd_split(o);
    if (train->parsed()) return cmd_train(o, effective);
    if (eval->parsed()) return cmd_eval(o);
    if (report->parsed()) return cmd_report(o);
    if (serve->parsed()) return cmd_serve(o);
    if (predict->parsed()) return cmd_predict(o);
    if (synth->parsed()) return cmd_synth(o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
