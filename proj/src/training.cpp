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

#include "habitat/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <new>
#include <numeric>

#include <json.hpp>

#include "habitat/checkpoint.hpp"
#include "habitat/errors.hpp"
#include "habitat/fs_util.hpp"
#include "habitat/image_io.hpp"
#include "habitat/nn/loss.hpp"
#include "habitat/nn/optim.hpp"
#include "habitat/report.hpp"
#include "habitat/rng.hpp"

namespace habitat {

namespace {

using ImageLoader = std::function<cv::Mat(const std::filesystem::path&)>;

// Decoded rasters are kept while they fit in the budget; later images are
// read from disk on every use.
class ImageCache {
 public:
  ImageCache(ImageLoader loader, std::size_t budget_bytes) : loader_(std::move(loader)), budget_(budget_bytes) {}

  cv::Mat get(const std::filesystem::path& p) {
    const auto key = p.string();
    if (const auto it = cache_.find(key); it != cache_.end()) return it->second;
    cv::Mat img = loader_(p);
    const std::size_t bytes = img.total() * img.elemSize();
    if (used_ + bytes <= budget_) {
      used_ += bytes;
      cache_.emplace(key, img);
    }
    return img;
  }

 private:
  ImageLoader loader_;
  std::size_t budget_;
  std::size_t used_ = 0;
  std::map<std::string, cv::Mat> cache_;
};

constexpr std::size_t kCacheBudget = std::size_t{2} << 30;

std::size_t argmax(const float* row, std::int64_t k) {
  std::size_t best = 0;
  for (std::int64_t j = 1; j < k; ++j)
    if (row[j] > row[best]) best = static_cast<std::size_t>(j);
  return best;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

ImageLoader loader_or_default(const TrainHooks& hooks) {
  if (hooks.load_image) return hooks.load_image;
  return [](const std::filesystem::path& p) { return load_rgb(p); };
}

}  // namespace

void TrainingConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be nonnegative");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
  if (early_stop_patience < 1) throw ConfigError("early_stop_patience must be at least 1");
}

EarlyStoppingUpdate early_stopping_update(const EarlyStoppingState& state, double current_val_accuracy, int patience) {
  EarlyStoppingUpdate u;
  u.state = state;
  if (current_val_accuracy > state.best) {
    u.state.best = current_val_accuracy;
    u.state.epochs_since_improve = 0;
    u.improved = true;
  } else {
    ++u.state.epochs_since_improve;
  }
  u.stop = u.state.epochs_since_improve >= patience;
  return u;
}

std::vector<PredictionRecord> predict_records(const Classifier& model, std::span<const ImageRecord> records,
                                              const ClassTaxonomy& taxonomy, const PreprocessConfig& preprocess,
                                              int fold, int batch_size, const ImageLoader& load_image) {
  std::vector<PredictionRecord> out;
  out.reserve(records.size());
  const auto bs = static_cast<std::size_t>(std::max(1, batch_size));
  for (std::size_t start = 0; start < records.size(); start += bs) {
    const auto end = std::min(records.size(), start + bs);
    std::vector<nn::Tensor> samples;
    for (std::size_t i = start; i < end; ++i) samples.push_back(preprocess_eval(load_image(records[i].path), preprocess));
    const auto probs = nn::softmax_rows(model.predict(nn::stack(samples)));
    for (std::size_t i = start; i < end; ++i)
      out.push_back(make_prediction_record(records[i].id, records[i].label, probs[i - start], taxonomy, fold));
  }
  return out;
}

FoldResult train_fold(const Manifest& manifest, const FoldAssignment& folds, int fold_index,
                      const ClassTaxonomy& taxonomy, const PipelineConfig& config, const TrainHooks& hooks) {
  const TrainingConfig& tc = config.training;
  tc.validate();
  config.preprocess.validate();
  config.augment.validate();
  config.balance.validate();
  config.model.validate();
  if (config.model.input_size != config.preprocess.target_size)
    throw ConfigError("model input_size (" + std::to_string(config.model.input_size) +
                      ") differs from preprocessing target_size (" + std::to_string(config.preprocess.target_size) + ")");
  if (static_cast<std::size_t>(config.model.n_classes) != taxonomy.size())
    throw ConfigError("model n_classes (" + std::to_string(config.model.n_classes) + ") differs from taxonomy size (" +
                      std::to_string(taxonomy.size()) + ")");
  if (fold_index < 0 || fold_index >= folds.n_folds)
    throw ValidationError("fold index " + std::to_string(fold_index) + " out of range for " +
                          std::to_string(folds.n_folds) + " folds");
  manifest.validate(taxonomy);

  const FoldPartition part = partition(manifest, folds, fold_index);
  if (part.train.empty() || part.validation.empty())
    throw ValidationError("fold " + std::to_string(fold_index) + " has an empty training or validation portion");

  std::vector<std::string> present;
  for (const auto& [label, n] : manifest.per_class_counts())
    if (n > 0) present.push_back(label);
  BalanceConfig bal = config.balance;
  bal.seed = mix_seed(config.balance.seed, static_cast<std::uint64_t>(fold_index));
  const std::vector<ImageRecord> train = balance_class_counts(part.train, bal, present);

  const std::filesystem::path fold_dir =
      hooks.output_dir.empty() ? std::filesystem::path() : hooks.output_dir / ("fold_" + std::to_string(fold_index));
  if (!fold_dir.empty()) {
    std::filesystem::create_directories(fold_dir);
    write_file_atomic(fold_dir / "balanced.jsonl", balanced_set_to_jsonl(train));
  }

  ImageCache cache(loader_or_default(hooks), kCacheBudget);
  const ImageLoader cached = [&](const std::filesystem::path& p) { return cache.get(p); };

  FoldResult result;
  result.fold = fold_index;
  result.train_size = train.size();

  try {
    BuildOptions build = hooks.build;
    build.seed = derive_seed(tc.seed, "model");
    auto model = build_classifier(config.model, build);
    model->set_mixed_precision(tc.mixed_precision);
    model->set_gradient_checkpointing(tc.gradient_checkpointing);
    nn::AdamWConfig oc;
    oc.learning_rate = tc.learning_rate;
    oc.weight_decay = tc.weight_decay;
    nn::AdamW opt(model->parameters(), oc);

    std::vector<int> targets(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) targets[i] = static_cast<int>(taxonomy.index_of(train[i].label));

    EarlyStoppingState es;
    const auto bs = static_cast<std::size_t>(tc.batch_size);
    for (int epoch = 1; epoch <= tc.max_epochs; ++epoch) {
      std::vector<std::size_t> order(train.size());
      std::iota(order.begin(), order.end(), 0);
      Engine shuffler(mix_seed(derive_seed(tc.seed, "shuffle"), static_cast<std::uint64_t>(epoch)));
      shuffle(order, shuffler);

      double loss_sum = 0.0;
      std::size_t correct = 0;
      for (std::size_t start = 0; start < order.size(); start += bs) {
        const auto end = std::min(order.size(), start + bs);
        std::vector<nn::Tensor> samples;
        std::vector<int> batch_targets;
        for (std::size_t i = start; i < end; ++i) {
          const ImageRecord& rec = train[order[i]];
          const std::uint64_t sample_seed = rec.augmentation_seed.value_or(stable_hash(rec.id));
          Engine draw(mix_seed(mix_seed(config.augment.seed, sample_seed), static_cast<std::uint64_t>(epoch)));
          samples.push_back(preprocess_train(cache.get(rec.path), config.preprocess, config.augment, draw));
          batch_targets.push_back(targets[order[i]]);
        }
        const nn::Tensor logits = model->forward(nn::stack(samples), Mode::train);
        const nn::LossResult lr = nn::softmax_cross_entropy(logits, batch_targets);
        if (!std::isfinite(lr.loss) || !nn::all_finite(logits))
          throw TrainingError("non-finite loss (" + fmt("%g", lr.loss) + ") in fold " + std::to_string(fold_index) +
                              ", epoch " + std::to_string(epoch) + ", batch " + std::to_string(start / bs + 1) +
                              " (learning rate " + fmt("%g", tc.learning_rate) + ", mixed precision " +
                              (tc.mixed_precision ? "on" : "off") +
                              "); try a lower learning rate or disabling mixed precision");
        opt.zero_grad();
        model->backward(lr.grad);
        opt.step();
        model->release_cache();
        loss_sum += lr.loss * static_cast<double>(end - start);
        const auto k = logits.dim(1);
        for (std::size_t i = 0; i < end - start; ++i)
          correct += argmax(logits.data() + static_cast<std::int64_t>(i) * k, k) ==
                     static_cast<std::size_t>(batch_targets[i]);
      }

      std::vector<PredictionRecord> records =
          predict_records(*model, part.validation, taxonomy, config.preprocess, fold_index, tc.batch_size, cached);
      const MetricsReport rep = build_report(records, taxonomy);
      EpochStats st;
      st.epoch = epoch;
      st.train_accuracy = static_cast<double>(correct) / static_cast<double>(train.size());
      st.train_loss = loss_sum / static_cast<double>(train.size());
      st.val_accuracy = rep.top1_accuracy;
      st.val_loss = rep.val_loss;
      result.history.push_back(st);
      if (hooks.log)
        *hooks.log << "fold " << fold_index << " epoch " << epoch << " train_acc " << fmt("%.4f", st.train_accuracy)
                   << " train_loss " << fmt("%.4f", st.train_loss) << " val_acc " << fmt("%.4f", st.val_accuracy)
                   << " val_loss " << fmt("%.4f", st.val_loss) << std::endl;
      if (hooks.on_epoch) hooks.on_epoch(fold_index, st);

      const EarlyStoppingUpdate u = early_stopping_update(es, st.val_accuracy, tc.early_stop_patience);
      es = u.state;
      if (u.improved) {
        result.best_epoch = epoch;
        result.best_val_accuracy = st.val_accuracy;
        result.prediction_records = std::move(records);
        if (!fold_dir.empty()) {
          CheckpointMetadata meta;
          meta.config = config.model;
          meta.taxonomy_version = taxonomy.version();
          meta.class_labels = taxonomy.abbreviations();
          meta.epoch = epoch;
          meta.val_accuracy = st.val_accuracy;
          result.best_checkpoint = fold_dir / "best.hwt";
          save_checkpoint(result.best_checkpoint, *model, meta);
        }
      }
      if (u.stop) break;
    }
  } catch (const std::bad_alloc&) {
    throw ResourceError("out of memory while training fold " + std::to_string(fold_index) + " with batch size " +
                        std::to_string(tc.batch_size) + "; reduce the batch size or enable gradient checkpointing");
  }

  if (!fold_dir.empty()) {
    write_file_atomic(fold_dir / "history.csv", history_to_csv(result.history));
    save_prediction_log(fold_dir / "predictions.jsonl", result.prediction_records);
    write_file_atomic(fold_dir / "metrics.json",
                      report_to_json(build_report(result.prediction_records, taxonomy)).dump(2) + "\n");
  }
  return result;
}

CrossValidationResult run_cross_validation(const Manifest& manifest, const FoldAssignment& folds,
                                           const ClassTaxonomy& taxonomy, const PipelineConfig& config,
                                           const TrainHooks& hooks) {
  CrossValidationResult cv;
  for (int f = 0; f < folds.n_folds; ++f) {
    try {
      cv.folds.push_back(train_fold(manifest, folds, f, taxonomy, config, hooks));
      cv.reports.push_back(build_report(cv.folds.back().prediction_records, taxonomy));
    } catch (const std::exception& e) {
      cv.failed_fold = f;
      cv.error = "fold " + std::to_string(f) + ": " + e.what();
      if (hooks.log) *hooks.log << "error: " << cv.error << std::endl;
      break;
    }
  }
  if (!cv.reports.empty()) cv.aggregate = aggregate_folds(cv.reports);
  if (!hooks.output_dir.empty() && cv.aggregate) {
    nlohmann::json summary = aggregate_to_json(*cv.aggregate);
    summary["folds"] = nlohmann::json::array();
    for (const auto& f : cv.folds)
      summary["folds"].push_back({{"fold", f.fold},
                                  {"best_epoch", f.best_epoch},
                                  {"best_val_accuracy", f.best_val_accuracy},
                                  {"epochs_run", f.history.size()},
                                  {"checkpoint", f.best_checkpoint.string()}});
    if (cv.failed_fold) summary["error"] = {{"fold", *cv.failed_fold}, {"message", cv.error}};
    write_file_atomic(hooks.output_dir / "summary.json", summary.dump(2) + "\n");
    write_file_atomic(hooks.output_dir / "summary.txt", format_aggregate_table(*cv.aggregate, taxonomy));
    write_file_atomic(hooks.output_dir / "history_bands.csv", bands_to_csv(history_bands(cv.folds)));
    std::vector<PredictionRecord> all;
    for (const auto& f : cv.folds) all.insert(all.end(), f.prediction_records.begin(), f.prediction_records.end());
    save_prediction_log(hooks.output_dir / "predictions.jsonl", all);
  }
  return cv;
}

std::vector<HistoryBand> history_bands(const std::vector<FoldResult>& folds) {
  std::size_t longest = 0;
  for (const auto& f : folds) longest = std::max(longest, f.history.size());
  std::vector<HistoryBand> out;
  for (std::size_t e = 0; e < longest; ++e) {
    std::vector<double> ta, va, vl;
    for (const auto& f : folds) {
      if (e >= f.history.size()) continue;
      ta.push_back(f.history[e].train_accuracy);
      va.push_back(f.history[e].val_accuracy);
      vl.push_back(f.history[e].val_loss);
    }
    out.push_back({static_cast<int>(e + 1), static_cast<int>(ta.size()), mean_std(ta), mean_std(va), mean_std(vl)});
  }
  return out;
}

std::string history_to_csv(const std::vector<EpochStats>& history) {
  std::string out = "epoch,train_accuracy,val_accuracy,val_loss,train_loss\n";
  for (const auto& s : history)
    out += std::to_string(s.epoch) + "," + fmt("%.17g", s.train_accuracy) + "," + fmt("%.17g", s.val_accuracy) + "," +
           fmt("%.17g", s.val_loss) + "," + fmt("%.17g", s.train_loss) + "\n";
  return out;
}

std::string bands_to_csv(const std::vector<HistoryBand>& bands) {
  std::string out =
      "epoch,n_folds,train_accuracy_mean,train_accuracy_std,val_accuracy_mean,val_accuracy_std,val_loss_mean,"
      "val_loss_std\n";
  for (const auto& b : bands)
    out += std::to_string(b.epoch) + "," + std::to_string(b.n_folds) + "," + fmt("%.17g", b.train_accuracy.mean) +
           "," + fmt("%.17g", b.train_accuracy.std) + "," + fmt("%.17g", b.val_accuracy.mean) + "," +
           fmt("%.17g", b.val_accuracy.std) + "," + fmt("%.17g", b.val_loss.mean) + "," +
           fmt("%.17g", b.val_loss.std) + "\n";
  return out;
}

}  // namespace habitat
