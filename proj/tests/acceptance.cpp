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

// Acceptance gate. Each criterion prints one PASS/FAIL line; the exit code
// is nonzero when any criterion fails. Tolerances and budgets are fixed
// below and are not configurable.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "habitat/balance.hpp"
#include "habitat/checkpoint.hpp"
#include "habitat/dataset.hpp"
#include "habitat/evaluation.hpp"
#include "habitat/fs_util.hpp"
#include "habitat/image_io.hpp"
#include "habitat/model.hpp"
#include "habitat/nn/layers.hpp"
#include "habitat/nn/loss.hpp"
#include "habitat/preprocess.hpp"
#include "habitat/service.hpp"
#include "habitat/synthetic.hpp"
#include "habitat/training.hpp"
#include "support.hpp"

using namespace habitat;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr double kMetricTol = 1e-12;
constexpr double kSoftmaxTol = 1e-6;
constexpr double kNormTol = 1e-6;
constexpr double kGradTol = 1e-4;
constexpr double kDriftTol = 1e-6;
constexpr double kParityTol = 1e-6;
constexpr double kMetricsBudget = 10.0;   // seconds
constexpr double kBalanceBudget = 30.0;   // seconds
constexpr double kOverfitBudget = 300.0;  // seconds
constexpr double kOverfitAccuracy = 0.95;
constexpr int kOverfitEpochs = 10;
constexpr std::size_t kOverfitTargetPerClass = 128;

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(const std::string& name, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("%s %s (%s; %.1fs)\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), secs);
  std::fflush(stdout);
  failures += !o.pass;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome metrics_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  test::Gen g(101);
  int mismatches = 0;
  double ovr_gap = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto k = static_cast<std::size_t>(g.integer(2, 18));
    std::vector<HabitatClass> classes;
    for (std::size_t c = 0; c < k; ++c) classes.push_back({"c", "K" + std::to_string(100 + c), "", 0, {}});
    const ClassTaxonomy tax(classes, "rand");
    auto cm = empty_confusion(tax);
    for (auto& row : cm.counts)
      for (auto& v : row) v = g.integer(0, 50);

    // Expand to records and count one-vs-rest outcomes record by record.
    std::vector<std::pair<std::size_t, std::size_t>> records;
    for (std::size_t t = 0; t < k; ++t)
      for (std::size_t p = 0; p < k; ++p)
        for (std::int64_t n = 0; n < cm.counts[t][p]; ++n) records.emplace_back(t, p);

    const auto got = per_class_metrics(cm);
    double ovr_sum = 0.0, ovr_oracle = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
      for (auto [t, p] : records) {
        if (t == c && p == c) ++tp;
        else if (t != c && p == c) ++fp;
        else if (t == c && p != c) ++fn;
        else ++tn;
      }
      const double prec = tp + fp ? double(tp) / double(tp + fp) : 0.0;
      const double rec = tp + fn ? double(tp) / double(tp + fn) : 0.0;
      const double f1 = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
      const double acc = records.empty() ? 0.0 : double(tp + tn) / double(records.size());
      const auto& m = got[c];
      const bool ok = m.tp == tp && m.fp == fp && m.fn == fn && m.tn == tn && m.support == tp + fn &&
                      std::abs(m.precision - prec) <= kMetricTol && std::abs(m.recall - rec) <= kMetricTol &&
                      std::abs(m.f1 - f1) <= kMetricTol && std::abs(m.accuracy - acc) <= kMetricTol;
      mismatches += !ok;
      ovr_sum += m.accuracy;
      ovr_oracle += acc;
    }
    ovr_gap = std::max(ovr_gap, std::abs(ovr_sum / k - ovr_oracle / k));
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && ovr_gap <= kMetricTol && secs < kMetricsBudget,
          "200 matrices, " + std::to_string(mismatches) + " class mismatches, mean OvR accuracy gap " +
              fmt("%.1e", ovr_gap) + ", " + fmt("%.2f", secs) + "s of " + fmt("%.0f", kMetricsBudget) + "s"};
}

Outcome topk_properties() {
  test::Gen g(202);
  const auto& tax = ClassTaxonomy::living_england();
  int violations = 0;
  for (int set = 0; set < 1000; ++set) {
    const auto n = g.integer(1, 60);
    std::vector<PredictionRecord> rs;
    for (std::int64_t i = 0; i < n; ++i) {
      auto p = g.simplex(tax.size());
      // Occasionally force ties to exercise the tie-break.
      if (g.coin(0.1)) p[static_cast<std::size_t>(g.integer(0, 17))] = p[static_cast<std::size_t>(g.integer(0, 17))];
      double s = 0.0;
      for (double v : p) s += v;
      for (double& v : p) v /= s;
      rs.push_back(make_prediction_record("r" + std::to_string(i), tax.at(static_cast<std::size_t>(g.integer(0, 17))).abbreviation,
                                          p, tax, 0));
    }
    const double top1 = topk_accuracy(rs, 1), top3 = topk_accuracy(rs, 3);
    const auto cm = confusion_matrix(rs, tax);
    const double micro = static_cast<double>(cm.trace()) / static_cast<double>(cm.total());
    violations += !(top3 >= top1) || micro != top1;
  }
  return {violations == 0, "1000 record sets, " + std::to_string(violations) + " violations"};
}

Outcome balancing_invariant() {
  const auto t0 = std::chrono::steady_clock::now();
  test::Gen g(303);
  const auto& tax = ClassTaxonomy::living_england();
  const std::size_t target = 1000 / 10;  // default target on the same ÷10 scale as the counts
  int bad_counts = 0, leaks = 0, nondeterministic = 0, runs = 0;
  for (int trial = 0; trial < 8; ++trial) {
    std::vector<ImageRecord> rs;
    for (const auto& c : tax.classes()) {
      const auto n = g.integer(224, 10555) / 10;
      for (std::int64_t i = 0; i < n; ++i) {
        ImageRecord r;
        r.id = c.abbreviation + "/" + std::to_string(i) + ".jpg";
        r.path = r.id;
        r.label = c.abbreviation;
        rs.push_back(std::move(r));
      }
    }
    const Manifest m(std::move(rs), tax.version());
    const auto folds = stratified_kfold_split(m, 5, static_cast<std::uint64_t>(trial));
    for (int f = 0; f < 5; ++f) {
      const auto part = partition(m, folds, f);
      std::set<std::string> train_ids;
      for (const auto& r : part.train) train_ids.insert(r.id);
      const BalanceConfig cfg{target, mix_seed(77, static_cast<std::uint64_t>(f))};
      const auto out = balance_class_counts(part.train, cfg, tax.abbreviations());
      std::map<std::string, std::size_t> per;
      for (const auto& r : out) {
        per[r.label]++;
        const std::string& source = r.origin == Origin::augmented ? r.parent_id.value_or("") : r.id;
        leaks += !train_ids.contains(source) || folds.fold_of(source) == f;
      }
      for (const auto& c : tax.classes()) bad_counts += per[c.abbreviation] != target;
      nondeterministic += balance_class_counts(part.train, cfg, tax.abbreviations()) != out;
      ++runs;
    }
  }
  const double secs = seconds_since(t0);
  return {bad_counts == 0 && leaks == 0 && nondeterministic == 0 && secs < kBalanceBudget,
          std::to_string(runs) + " fold balancings at target " + std::to_string(target) + ", " +
              std::to_string(bad_counts) + " wrong class counts, " + std::to_string(leaks) + " leaked parents, " +
              std::to_string(nondeterministic) + " nondeterministic, " + fmt("%.2f", secs) + "s of " +
              fmt("%.0f", kBalanceBudget) + "s"};
}

Outcome fold_invariants() {
  test::Gen g(404);
  const auto& tax = ClassTaxonomy::living_england();
  int violations = 0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<ImageRecord> rs;
    // Every class gets at least 5, the rest are spread at random.
    for (int i = 0; i < 500; ++i) {
      ImageRecord r;
      r.id = "img" + std::to_string(i);
      r.path = r.id;
      r.label = i < 90 ? tax.at(static_cast<std::size_t>(i / 5)).abbreviation
                       : tax.at(static_cast<std::size_t>(g.integer(0, 17))).abbreviation;
      rs.push_back(std::move(r));
    }
    const Manifest m(rs, tax.version());
    const auto folds = stratified_kfold_split(m, 5, static_cast<std::uint64_t>(trial));
    std::multiset<std::string> seen;
    std::map<std::string, std::vector<int>> per_class;
    for (int f = 0; f < 5; ++f) {
      const auto part = partition(m, folds, f);
      for (const auto& r : part.validation) {
        seen.insert(r.id);
        auto& v = per_class[r.label];
        v.resize(5);
        v[f]++;
      }
    }
    violations += seen.size() != 500 || std::set<std::string>(seen.begin(), seen.end()).size() != 500;
    for (const auto& [label, v] : per_class)
      violations += *std::max_element(v.begin(), v.end()) - *std::min_element(v.begin(), v.end()) > 1;
  }
  return {violations == 0, "20 splits of 500 records into 5 folds, " + std::to_string(violations) + " violations"};
}

Outcome shape_and_normalization() {
  std::string detail;
  bool ok = true;
  test::Gen g(505);
  const PreprocessConfig pre;
  auto images = [&](std::int64_t b) {
    std::vector<nn::Tensor> xs;
    for (std::int64_t i = 0; i < b; ++i) {
      cv::Mat img(180 + 10 * static_cast<int>(i), 240, CV_8UC3);
      cv::randu(img, cv::Scalar::all(0), cv::Scalar::all(255));
      xs.push_back(preprocess_eval(img, pre));
    }
    return nn::stack(xs);
  };
  auto check = [&](const Classifier& m, std::int64_t b, const std::string& tag) {
    const auto logits = m.predict(images(b));
    const bool shape = logits.shape() == nn::Shape{b, 18} && nn::all_finite(logits);
    double worst = 0.0;
    for (const auto& row : nn::softmax_rows(logits)) {
      double s = 0.0;
      for (double p : row) s += p;
      worst = std::max(worst, std::abs(s - 1.0));
    }
    ok &= shape && worst <= kSoftmaxTol;
    detail += tag + " B=" + std::to_string(b) + (shape ? " 18 finite logits" : " BAD SHAPE") +
              ", softmax err " + fmt("%.1e", worst) + "; ";
  };

  ClassifierConfig tiny;
  tiny.backbone = "tiny_dilated";
  tiny.pretrained = false;
  const auto small = build_classifier(tiny, {.seed = 1});
  check(*small, 1, "tiny_dilated");
  check(*small, 16, "tiny_dilated");
  ClassifierConfig full;  // default backbone, random weights
  full.pretrained = false;
  const auto big = build_classifier(full, {.seed = 1});
  check(*big, 1, full.backbone);

  // Channel value equal to the mean maps to zero; denormalize inverts.
  PreprocessConfig exact;
  exact.channel_means = {64.0 / 255.0, 128.0 / 255.0, 192.0 / 255.0};
  const auto z = preprocess_eval(test::solid(50, 70, 64, 128, 192), exact);
  double zero_err = 0.0;
  for (auto v : z.values()) zero_err = std::max(zero_err, std::abs(static_cast<double>(v)));
  cv::Mat img(224, 224, CV_8UC3);
  cv::randu(img, cv::Scalar::all(0), cv::Scalar::all(255));
  const auto back = denormalize(preprocess_eval(img, pre), pre);
  double trip = 0.0;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 224; ++y)
      for (int x = 0; x < 224; ++x)
        trip = std::max(trip, std::abs(back[(c * 224 + y) * 224 + x] - img.at<cv::Vec3b>(y, x)[c] / 255.0));
  ok &= zero_err <= kNormTol && trip <= kNormTol;
  detail += "mean->0 err " + fmt("%.1e", zero_err) + ", round trip err " + fmt("%.1e", trip);
  return {ok, detail};
}

Outcome gradient_check() {
  // Frozen features N×C×H×W -> 1x1 conv to 2 classes -> global average pool
  // -> softmax cross-entropy. Analytic gradients come from the float layers;
  // the oracle re-derives the loss in double and differences it centrally.
  constexpr std::int64_t N = 4, C = 6, H = 3, W = 3, K = 2;
  test::Gen g(606);
  nn::Tensor feats({N, C, H, W});
  for (auto& v : feats.values()) v = static_cast<float>(g.real(-1.0, 1.0));
  const std::vector<int> targets = {0, 1, 1, 0};

  nn::Conv2d head({.in_channels = C, .out_channels = K, .kernel = 1});
  Engine eng(7);
  head.initialize(eng);
  nn::GlobalAvgPool pool;
  const nn::ForwardContext ctx;
  const auto logits = pool.forward(head.forward(feats, ctx), ctx);
  const auto loss = nn::softmax_cross_entropy(logits, targets);
  head.weight_grad().zero();
  head.bias_grad().zero();
  head.backward(pool.backward(loss.grad));

  std::vector<double> w(head.weight().values().begin(), head.weight().values().end());
  std::vector<double> b(head.bias().values().begin(), head.bias().values().end());
  auto oracle_loss = [&](const std::vector<double>& wd, const std::vector<double>& bd) {
    double total = 0.0;
    for (std::int64_t n = 0; n < N; ++n) {
      double z[K];
      for (std::int64_t k = 0; k < K; ++k) {
        double acc = 0.0;
        for (std::int64_t c = 0; c < C; ++c)
          for (std::int64_t i = 0; i < H * W; ++i) acc += wd[k * C + c] * feats[(n * C + c) * H * W + i];
        z[k] = acc / (H * W) + bd[k];
      }
      const double mx = std::max(z[0], z[1]);
      const double lse = mx + std::log(std::exp(z[0] - mx) + std::exp(z[1] - mx));
      total += lse - z[targets[n]];
    }
    return total / N;
  };
  const double h = 1e-6;
  double num2 = 0.0, den2 = 0.0, worst = 0.0;
  auto compare = [&](double analytic, double numeric) {
    num2 += (analytic - numeric) * (analytic - numeric);
    den2 += numeric * numeric;
    worst = std::max(worst, std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8}));
  };
  for (std::size_t i = 0; i < w.size(); ++i) {
    auto up = w, down = w;
    up[i] += h;
    down[i] -= h;
    compare(head.weight_grad()[static_cast<std::int64_t>(i)], (oracle_loss(up, b) - oracle_loss(down, b)) / (2 * h));
  }
  for (std::size_t i = 0; i < b.size(); ++i) {
    auto up = b, down = b;
    up[i] += h;
    down[i] -= h;
    compare(head.bias_grad()[static_cast<std::int64_t>(i)], (oracle_loss(w, up) - oracle_loss(w, down)) / (2 * h));
  }
  const double rel = std::sqrt(num2) / std::sqrt(den2);
  return {rel < kGradTol, std::to_string(w.size() + b.size()) + " head parameters, relative error " + fmt("%.2e", rel) +
                              " (worst element " + fmt("%.2e", worst) + ")"};
}

// Logistic regression on per-image channel means: the separability oracle
// for the synthetic set.
double channel_mean_logreg_accuracy(const Manifest& m) {
  std::vector<std::array<double, 3>> xs;
  std::vector<int> ys;
  for (const auto& r : m.records()) {
    const auto mean = cv::mean(load_rgb(r.path));
    xs.push_back({mean[0] / 255.0, mean[1] / 255.0, mean[2] / 255.0});
    ys.push_back(r.label == "RED");
  }
  double w[3] = {0, 0, 0}, b = 0;
  for (int it = 0; it < 500; ++it) {
    double gw[3] = {0, 0, 0}, gb = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double z = w[0] * xs[i][0] + w[1] * xs[i][1] + w[2] * xs[i][2] + b;
      const double err = 1.0 / (1.0 + std::exp(-z)) - ys[i];
      for (int c = 0; c < 3; ++c) gw[c] += err * xs[i][c];
      gb += err;
    }
    for (int c = 0; c < 3; ++c) w[c] -= gw[c] / double(xs.size());
    b -= gb / double(xs.size());
  }
  int correct = 0;
  for (std::size_t i = 0; i < xs.size(); ++i)
    correct += ((w[0] * xs[i][0] + w[1] * xs[i][1] + w[2] * xs[i][2] + b) > 0) == (ys[i] == 1);
  return double(correct) / double(xs.size());
}

struct SyntheticRun {
  test::TempDir dir{"accept"};
  ClassTaxonomy taxonomy = synthetic_color_taxonomy();
  fs::path checkpoint;
  fs::path sample_image;
};

Outcome synthetic_overfit(SyntheticRun& run) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto data = run.dir / "data";
  write_color_dataset(data, {.per_class = 40, .image_size = 64, .seed = derive_seed(2026, "synthetic")});
  const auto manifest = ingest_directory(data, run.taxonomy, {}).manifest;
  const double oracle = channel_mean_logreg_accuracy(manifest);
  const auto folds = stratified_kfold_split(manifest, 5, derive_seed(2026, "split"));

  PipelineConfig cfg;
  cfg.model.backbone = "tiny_dilated";
  cfg.model.pretrained = false;
  cfg.model.n_classes = 2;
  cfg.balance.target_per_class = kOverfitTargetPerClass;
  cfg.balance.seed = derive_seed(2026, "balance");
  cfg.augment.seed = derive_seed(2026, "augment");
  cfg.training.seed = derive_seed(2026, "train");
  cfg.training.mixed_precision = false;
  cfg.training.gradient_checkpointing = false;
  const auto r = train_fold(manifest, folds, 0, run.taxonomy, cfg, {.output_dir = run.dir / "run"});
  run.checkpoint = r.best_checkpoint;
  run.sample_image = manifest.records().front().path;
  const double secs = seconds_since(t0);

  bool frozen = true;  // nothing after the best epoch beats it
  for (const auto& h : r.history)
    if (h.epoch > r.best_epoch) frozen &= h.val_accuracy <= r.best_val_accuracy;
  const bool early_stop = r.history.size() == static_cast<std::size_t>(r.best_epoch + cfg.training.early_stop_patience) &&
                          frozen && static_cast<int>(r.history.size()) < cfg.training.max_epochs;
  const bool ok = oracle == 1.0 && r.best_val_accuracy >= kOverfitAccuracy && r.best_epoch <= kOverfitEpochs &&
                  early_stop && secs < kOverfitBudget;
  return {ok, "80 images, channel-mean oracle " + fmt("%.2f", oracle) + ", best val " + fmt("%.3f", r.best_val_accuracy) +
                  " at epoch " + std::to_string(r.best_epoch) + ", stopped after " + std::to_string(r.history.size()) +
                  " epochs (patience 7), " + fmt("%.0f", secs) + "s of " + fmt("%.0f", kOverfitBudget) + "s"};
}

Outcome checkpoint_fidelity() {
  test::TempDir dir("drift");
  ClassifierConfig c;
  c.backbone = "tiny_dilated";
  c.pretrained = false;
  auto m = build_classifier(c, {.seed = 808});
  test::Gen g(808);
  auto random_batch = [&](std::int64_t b) {
    nn::Tensor x({b, 3, 224, 224});
    for (auto& v : x.values()) v = static_cast<float>(g.real(-2.5, 2.5));
    return x;
  };
  // A few train-mode passes so the running statistics are not at their defaults.
  for (int i = 0; i < 2; ++i) m->forward(random_batch(2), Mode::train);
  m->release_cache();
  const auto& tax = ClassTaxonomy::living_england();
  save_checkpoint(dir / "m.hwt", *m, {c, tax.version(), tax.abbreviations(), 3, 0.25, ""});
  const auto loaded = load_checkpoint(dir / "m.hwt", &tax);
  float drift = 0.0f;
  for (int i = 0; i < 4; ++i) {
    const auto x = random_batch(2);
    drift = std::max(drift, nn::max_abs_diff(m->predict(x), loaded.model->predict(x)));
  }
  return {drift < kDriftTol, "max |logit drift| " + fmt("%.1e", drift) + " over 8 random inputs"};
}

Outcome service_parity(const SyntheticRun& run) {
  std::string detail;
  bool ok = true;
  test::TempDir dir("parity");

  // Two checkpoints: the trained synthetic model and a random 18-class one.
  const auto& le = ClassTaxonomy::living_england();
  {
    ClassifierConfig c;
    c.backbone = "tiny_dilated";
    c.pretrained = false;
    save_checkpoint(dir / "le.hwt", *build_classifier(c, {.seed = 909}), {c, le.version(), le.abbreviations(), 1, 0.0, ""});
    write_file_atomic(dir / "synthetic_taxonomy.json", taxonomy_to_json(run.taxonomy));
  }
  cv::Mat photo(300, 400, CV_8UC3);
  cv::randu(photo, cv::Scalar::all(0), cv::Scalar::all(255));
  save_rgb(dir / "photo.jpg", photo);

  struct Case {
    std::string tag;
    fs::path checkpoint, taxonomy, image;
  };
  const std::vector<Case> cases = {{"synthetic", run.checkpoint, dir / "synthetic_taxonomy.json", run.sample_image},
                                   {"18-class", dir / "le.hwt", {}, dir / "photo.jpg"}};
  for (const auto& cs : cases) {
    ServiceConfig sc;
    sc.checkpoint = cs.checkpoint;
    sc.taxonomy = cs.taxonomy;
    sc.port = 0;
    sc.data_dir = dir / ("svc_" + cs.tag);
    InferenceService svc(sc);
    svc.start();
    httplib::Client cli("127.0.0.1", svc.port());

    const std::string bytes = read_file(cs.image);
    httplib::MultipartFormDataItems items;
    const int n_uploads = 3;
    for (int i = 0; i < n_uploads; ++i) items.push_back({"files", bytes, cs.image.filename().string(), "image/*"});
    const auto res = cli.Post("/predict", items);
    if (!res || res->status != 200) return {false, cs.tag + ": /predict failed"};
    const auto body = json::parse(res->body);

    // Offline path: evaluation module on the same checkpoint and file.
    const auto tax = load_taxonomy_or_default(cs.taxonomy);
    const auto loaded = load_checkpoint(cs.checkpoint, &tax);
    ImageRecord rec;
    rec.id = "offline";
    rec.path = cs.image;
    rec.label = tax.at(0).abbreviation;
    const std::vector<ImageRecord> recs = {rec};
    const auto offline = predict_records(*loaded.model, recs, tax, sc.preprocess, 0, 1, load_rgb)[0];

    bool labels_equal = true;
    double worst = 0.0;
    for (const auto& entry : body) {
      const auto& top = entry["top3"];
      labels_equal &= top.size() == offline.top3.size();
      for (std::size_t i = 0; i < std::min(top.size(), offline.top3.size()); ++i) {
        labels_equal &= top[i]["abbreviation"].get<std::string>() == offline.top3[i].label;
        worst = std::max(worst, std::abs(top[i]["probability"].get<double>() - offline.top3[i].probability));
      }
    }

    // Feedback: first upload with consent, the others without.
    int accepted = 0;
    for (int i = 0; i < n_uploads; ++i) {
      const json fb = {{"image_id", body[i]["image_id"]},
                       {"predicted_label", body[i]["top3"][0]["abbreviation"]},
                       {"verdict", "confirm"},
                       {"confidence_shown", body[i]["top3"][0]["probability"]},
                       {"consent_to_store", i == 0}};
      const auto r = cli.Post("/feedback", fb.dump(), "application/json");
      accepted += r && r->status == 200;
    }
    const auto logs = sc.data_dir / "logs";
    const auto csv_rows = split_lines(read_file(logs / "feedback.csv")).size() - 1;
    const auto json_rows = split_lines(read_file(logs / "feedback.jsonl")).size();
    std::size_t retained = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(sc.data_dir / "retention")) ++retained;

    // A consent=false submission on its own leaves the store empty.
    ServiceConfig sc2 = sc;
    sc2.data_dir = dir / ("svc_noconsent_" + cs.tag);
    InferenceService svc2(sc2);
    svc2.start();
    httplib::Client cli2("127.0.0.1", svc2.port());
    httplib::MultipartFormDataItems one = {{"files", bytes, cs.image.filename().string(), "image/*"}};
    const auto body2 = json::parse(cli2.Post("/predict", one)->body);
    cli2.Post("/feedback",
              json{{"image_id", body2[0]["image_id"]}, {"predicted_label", body2[0]["top3"][0]["abbreviation"]},
                   {"verdict", "confirm"}, {"consent_to_store", false}}
                  .dump(),
              "application/json");
    std::size_t retained_no = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(sc2.data_dir / "retention")) ++retained_no;
    svc2.stop();
    svc.stop();

    const bool case_ok = labels_equal && worst <= kParityTol && accepted == n_uploads &&
                         csv_rows == static_cast<std::size_t>(n_uploads) && json_rows == csv_rows && retained == 1 &&
                         retained_no == 0;
    ok &= case_ok;
    if (!detail.empty()) detail += "; ";
    detail += cs.tag + ": labels " + (labels_equal ? "equal" : "DIFFER") + ", max |dp| " + fmt("%.1e", worst) +
              ", csv/json " + std::to_string(csv_rows) + "/" + std::to_string(json_rows) + ", retained " +
              std::to_string(retained) + " of 1 consented, " + std::to_string(retained_no) + " without consent";
  }
  return {ok, detail};
}

}  // namespace

int main() {
  std::printf("habitat acceptance\n");
  criterion("metrics-oracle-equivalence", metrics_oracle);
  criterion("topk-properties", topk_properties);
  criterion("balancing-invariant", balancing_invariant);
  criterion("fold-invariants", fold_invariants);
  criterion("shape-normalization", shape_and_normalization);
  criterion("gradient-check", gradient_check);
  SyntheticRun run;
  criterion("synthetic-overfit", [&] { return synthetic_overfit(run); });
  criterion("checkpoint-fidelity", checkpoint_fidelity);
  criterion("service-parity", [&] {
    if (run.checkpoint.empty()) return Outcome{false, "no synthetic checkpoint to serve"};
    return service_parity(run);
  });
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
