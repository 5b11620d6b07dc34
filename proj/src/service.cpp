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

#include "habitat/service.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <random>

#include <httplib.h>

#include "habitat/csv.hpp"
#include "habitat/errors.hpp"
#include "habitat/evaluation.hpp"
#include "habitat/fs_util.hpp"
#include "habitat/image_io.hpp"
#include "habitat/nn/loss.hpp"
#include "habitat/rng.hpp"

namespace habitat {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kSupported[] = {"jpg", "jpeg", "png"};

std::string lower_extension(const std::string& filename) {
  std::string ext = fs::path(filename).extension().string();
  if (!ext.empty() && ext.front() == '.') ext.erase(0, 1);
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

bool supported_extension(const std::string& ext) {
  return std::find(std::begin(kSupported), std::end(kSupported), ext) != std::end(kSupported);
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message, json extra = json::object()) {
  extra["error"] = message;
  send_json(res, status, extra);
}

std::string display_probability(double p) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", p);
  return buf;
}

std::uint64_t file_size_or_zero(const fs::path& p) {
  std::error_code ec;
  const auto n = fs::file_size(p, ec);
  return ec ? 0 : n;
}

void append_line(const fs::path& p, const std::string& line) {
  std::ofstream out(p, std::ios::binary | std::ios::app);
  if (!out) throw Error("cannot append to " + p.string());
  out << line << '\n';
  out.flush();
  if (!out) throw Error("short write to " + p.string());
}

}  // namespace

void ServiceConfig::validate() const {
  if (port < 0 || port > 65535) throw ConfigError("port must be in [0, 65535]");
  if (max_upload_bytes == 0) throw ConfigError("max_upload_bytes must be positive");
  if (session_ttl.count() <= 0) throw ConfigError("session TTL must be positive");
  if (log_rotate_bytes == 0) throw ConfigError("log rotation size must be positive");
  preprocess.validate();
}

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::confirm: return "confirm";
    case Verdict::correct: return "correct";
    case Verdict::custom: return "custom";
  }
  return "?";
}

std::string utc_timestamp(std::chrono::system_clock::time_point t) {
  const auto secs = std::chrono::time_point_cast<std::chrono::seconds>(t);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(t - secs).count();
  const std::time_t tt = std::chrono::system_clock::to_time_t(secs);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[40];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

FeedbackRecord parse_feedback(const json& j, const ClassTaxonomy& taxonomy) {
  if (!j.is_object()) throw ValidationError("feedback payload must be a JSON object");
  const auto str = [&](const char* key) -> std::optional<std::string> {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    if (!j[key].is_string()) throw ValidationError(std::string("'") + key + "' must be a string");
    return j[key].get<std::string>();
  };
  FeedbackRecord r;
  r.image_id = str("image_id").value_or("");
  if (r.image_id.empty()) throw ValidationError("image_id is required");
  r.predicted_label = str("predicted_label").value_or("");
  if (!taxonomy.contains(r.predicted_label))
    throw ValidationError("predicted_label '" + r.predicted_label + "' is not in the taxonomy");
  const auto verdict = str("verdict") ? str("verdict") : str("user_verdict");
  if (!verdict) throw ValidationError("verdict is required (confirm, correct or custom)");
  if (*verdict == "confirm")
    r.verdict = Verdict::confirm;
  else if (*verdict == "correct")
    r.verdict = Verdict::correct;
  else if (*verdict == "custom")
    r.verdict = Verdict::custom;
  else
    throw ValidationError("unknown verdict '" + *verdict + "'");
  r.corrected_label = str("corrected_label");
  r.custom_label = str("custom_label");
  if (r.corrected_label && r.corrected_label->empty()) r.corrected_label.reset();
  if (r.custom_label && r.custom_label->empty()) r.custom_label.reset();
  if (r.verdict == Verdict::correct) {
    if (!r.corrected_label) throw ValidationError("verdict 'correct' requires corrected_label");
    if (!taxonomy.contains(*r.corrected_label))
      throw ValidationError("corrected_label '" + *r.corrected_label + "' is not in the taxonomy");
  }
  if (r.corrected_label && !taxonomy.contains(*r.corrected_label))
    throw ValidationError("corrected_label '" + *r.corrected_label + "' is not in the taxonomy");
  if (r.verdict == Verdict::custom && !r.custom_label)
    throw ValidationError("verdict 'custom' requires a non-empty custom_label");
  if (j.contains("confidence_shown")) {
    if (!j["confidence_shown"].is_number()) throw ValidationError("confidence_shown must be a number");
    r.confidence_shown = j["confidence_shown"].get<double>();
    if (!(r.confidence_shown >= 0.0 && r.confidence_shown <= 1.0))
      throw ValidationError("confidence_shown must be in [0, 1]");
  }
  const char* consent_key = j.contains("consent_to_store") ? "consent_to_store" : "consent";
  if (j.contains(consent_key)) {
    if (!j[consent_key].is_boolean()) throw ValidationError("consent must be a boolean");
    r.consent_to_store = j[consent_key].get<bool>();
  }
  r.timestamp = str("timestamp").value_or(utc_timestamp());
  return r;
}

json feedback_to_json(const FeedbackRecord& r) {
  return {{"timestamp", r.timestamp},
          {"image_id", r.image_id},
          {"predicted_label", r.predicted_label},
          {"verdict", to_string(r.verdict)},
          {"corrected_label", r.corrected_label ? json(*r.corrected_label) : json(nullptr)},
          {"custom_label", r.custom_label ? json(*r.custom_label) : json(nullptr)},
          {"confidence_shown", r.confidence_shown},
          {"consent", r.consent_to_store}};
}

// ---------------------------------------------------------------------------
// FeedbackLog

FeedbackLog::FeedbackLog(fs::path dir, std::uint64_t rotate_bytes) : dir_(std::move(dir)), rotate_bytes_(rotate_bytes) {
  fs::create_directories(dir_);
}

void FeedbackLog::rotate() {
  int n = 1;
  while (fs::exists(csv_path().string() + "." + std::to_string(n)) ||
         fs::exists(json_path().string() + "." + std::to_string(n)))
    ++n;
  const auto suffix = "." + std::to_string(n);
  if (fs::exists(csv_path())) fs::rename(csv_path(), csv_path().string() + suffix);
  if (fs::exists(json_path())) fs::rename(json_path(), json_path().string() + suffix);
}

void FeedbackLog::append(const FeedbackRecord& r) {
  const std::string csv_line = csv::join({r.timestamp, r.image_id, r.predicted_label, std::string(to_string(r.verdict)),
                                          r.corrected_label.value_or(""), r.custom_label.value_or(""),
                                          json(r.confidence_shown).dump(), r.consent_to_store ? "true" : "false"});
  const std::string json_line = feedback_to_json(r).dump();
  std::lock_guard lock(mu_);
  const auto csv_size = file_size_or_zero(csv_path());
  const auto json_size = file_size_or_zero(json_path());
  const bool has_entries = json_size > 0;
  if (has_entries && (csv_size + csv_line.size() + 1 > rotate_bytes_ || json_size + json_line.size() + 1 > rotate_bytes_))
    rotate();
  if (file_size_or_zero(csv_path()) == 0) append_line(csv_path(), kCsvHeader);
  append_line(csv_path(), csv_line);
  append_line(json_path(), json_line);
}

// ---------------------------------------------------------------------------
// InferenceService

InferenceService::InferenceService(ServiceConfig config)
    : config_(std::move(config)),
      taxonomy_(load_taxonomy_or_default(config_.taxonomy)),
      server_(std::make_unique<httplib::Server>()),
      started_(std::chrono::steady_clock::now()) {
  config_.validate();
  session_dir_ = config_.session_dir.empty() ? config_.data_dir / "sessions" : config_.session_dir;
  retention_dir_ = config_.retention_dir.empty() ? config_.data_dir / "retention" : config_.retention_dir;
  const fs::path log_dir = config_.log_dir.empty() ? config_.data_dir / "logs" : config_.log_dir;
  fs::create_directories(session_dir_);
  fs::create_directories(retention_dir_);
  feedback_ = std::make_unique<FeedbackLog>(log_dir, config_.log_rotate_bytes);
  id_state_ = std::random_device{}() ^ (static_cast<std::uint64_t>(std::random_device{}()) << 32);

  json classes = json::array();
  for (const auto& c : taxonomy_.classes())
    classes.push_back({{"abbreviation", c.abbreviation}, {"name", c.name}, {"definition", c.definition}});
  classes_body_ = json{{"taxonomy_version", taxonomy_.version()}, {"classes", classes}}.dump();

  if (!config_.checkpoint.empty()) load_model(config_.checkpoint);
  install_routes();
}

InferenceService::~InferenceService() {
  stop();
}

void InferenceService::load_model(const fs::path& checkpoint) {
  LoadedCheckpoint ck = load_checkpoint(checkpoint, &taxonomy_);
  if (ck.model->config().input_size != config_.preprocess.target_size)
    throw CompatibilityError("checkpoint input size " + std::to_string(ck.model->config().input_size) +
                             " differs from the preprocessing size " + std::to_string(config_.preprocess.target_size));
  auto m = std::make_shared<Model>();
  m->classifier = std::shared_ptr<const Classifier>(std::move(ck.model));
  m->meta = std::move(ck.meta);
  std::lock_guard lock(model_mu_);
  model_ = std::move(m);
}

std::shared_ptr<const InferenceService::Model> InferenceService::current_model() const {
  std::lock_guard lock(model_mu_);
  return model_;
}

bool InferenceService::has_model() const {
  return current_model() != nullptr;
}

std::string InferenceService::model_version() const {
  const auto m = current_model();
  return m ? m->meta.model_version : std::string();
}

std::string InferenceService::new_image_id() {
  std::lock_guard lock(session_mu_);
  id_state_ = splitmix64(id_state_);
  char buf[40];
  std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(id_state_),
                static_cast<unsigned long long>(splitmix64(id_state_ ^ 0x9e3779b97f4a7c15ULL)));
  return buf;
}

std::size_t InferenceService::purge_expired() {
  const auto now = std::chrono::steady_clock::now();
  std::lock_guard lock(session_mu_);
  std::size_t n = 0;
  for (auto it = sessions_.begin(); it != sessions_.end();) {
    if (now - it->second.created > config_.session_ttl) {
      std::error_code ec;
      fs::remove(it->second.file, ec);
      it = sessions_.erase(it);
      ++n;
    } else {
      ++it;
    }
  }
  return n;
}

std::size_t InferenceService::session_count() const {
  std::lock_guard lock(session_mu_);
  return sessions_.size();
}

void InferenceService::install_routes() {
  auto& svr = *server_;
  svr.set_default_headers({{"Access-Control-Allow-Origin", config_.cors_origin},
                           {"Access-Control-Allow-Headers", "Authorization, Content-Type"},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  svr.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  svr.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
    if (config_.auth_token.empty() || req.method == "OPTIONS") return httplib::Server::HandlerResponse::Unhandled;
    if (req.path != "/predict" && req.path != "/feedback") return httplib::Server::HandlerResponse::Unhandled;
    if (req.get_header_value("Authorization") == "Bearer " + config_.auth_token)
      return httplib::Server::HandlerResponse::Unhandled;
    send_error(res, 401, "missing or invalid bearer token");
    return httplib::Server::HandlerResponse::Handled;
  });

  svr.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string what = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    send_error(res, 500, what);
  });

  svr.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
    const double uptime = std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
    const auto m = current_model();
    if (!m) {
      send_json(res, 503, {{"status", "unavailable"}, {"model_version", nullptr}, {"uptime_seconds", uptime}});
      return;
    }
    send_json(res, 200,
              {{"status", "ok"},
               {"model_version", m->meta.model_version},
               {"taxonomy_version", taxonomy_.version()},
               {"uptime_seconds", uptime}});
  });

  svr.Get("/classes", [this](const httplib::Request&, httplib::Response& res) {
    res.set_content(classes_body_, "application/json");
  });

  svr.Post("/predict", [this](const httplib::Request& req, httplib::Response& res,
                              const httplib::ContentReader& reader) {
    purge_expired();
    const auto model = current_model();
    if (!model) return send_error(res, 503, "no model loaded");
    if (!req.is_multipart_form_data()) return send_error(res, 400, "expected multipart/form-data with image files");

    struct Upload {
      std::string filename;
      std::string content;
      std::size_t size = 0;
    };
    std::vector<Upload> uploads;
    reader(
        [&](const httplib::MultipartFormData& part) {
          uploads.push_back({part.filename.empty() ? part.name : part.filename, {}, 0});
          return true;
        },
        [&](const char* data, std::size_t n) {
          Upload& u = uploads.back();
          u.size += n;
          if (u.size <= config_.max_upload_bytes) u.content.append(data, n);
          return true;
        });
    if (uploads.empty()) return send_error(res, 400, "no files uploaded");

    std::vector<cv::Mat> images;
    for (const auto& u : uploads) {
      if (u.size > config_.max_upload_bytes)
        return send_error(res, 413, "file exceeds the upload size limit",
                          {{"file", u.filename}, {"limit_bytes", config_.max_upload_bytes}});
      const auto ext = lower_extension(u.filename);
      if (!supported_extension(ext))
        return send_error(res, 415, "unsupported image format",
                          {{"file", u.filename}, {"supported_formats", kSupported}});
      try {
        images.push_back(decode_rgb(std::span(reinterpret_cast<const unsigned char*>(u.content.data()), u.content.size())));
      } catch (const Error& e) {
        return send_error(res, 422, "cannot decode '" + u.filename + "': " + e.what(), {{"file", u.filename}});
      }
    }

    json out = json::array();
    for (std::size_t i = 0; i < uploads.size(); ++i) {
      nn::Tensor x = preprocess_eval(images[i], config_.preprocess);
      const auto shape = x.shape();
      const auto probs =
          nn::softmax_rows(model->classifier->predict(std::move(x).reshaped({1, shape[0], shape[1], shape[2]})));
      const auto top = top_k(probs[0], taxonomy_, 3);

      const std::string id = new_image_id();
      const fs::path file = session_dir_ / (id + "." + lower_extension(uploads[i].filename));
      write_file_atomic(file, uploads[i].content);
      {
        std::lock_guard lock(session_mu_);
        sessions_[id] = {file, top.front().label, top.front().probability, std::chrono::steady_clock::now()};
      }
      json entries = json::array();
      for (const auto& lp : top) {
        const auto& cls = taxonomy_.at(taxonomy_.index_of(lp.label));
        entries.push_back({{"abbreviation", cls.abbreviation},
                           {"name", cls.name},
                           {"definition", cls.definition},
                           {"probability", lp.probability},
                           {"probability_display", display_probability(lp.probability)}});
      }
      out.push_back({{"image_id", id},
                     {"filename", uploads[i].filename},
                     {"model_version", model->meta.model_version},
                     {"top3", entries}});
    }
    send_json(res, 200, out);
  });

  svr.Post("/feedback", [this](const httplib::Request& req, httplib::Response& res) {
    purge_expired();
    json payload;
    try {
      payload = json::parse(req.body);
    } catch (const json::exception& e) {
      return send_error(res, 400, std::string("malformed JSON: ") + e.what());
    }
    const std::string id = payload.is_object() ? payload.value("image_id", std::string()) : std::string();
    std::optional<Session> session;
    {
      std::lock_guard lock(session_mu_);
      if (const auto it = sessions_.find(id); it != sessions_.end()) session = it->second;
    }
    if (!session) return send_error(res, 404, "unknown or expired image_id '" + id + "'");
    FeedbackRecord record;
    try {
      record = parse_feedback(payload, taxonomy_);
    } catch (const ValidationError& e) {
      return send_error(res, 400, e.what());
    }
    feedback_->append(record);

    bool retained = false;
    {
      std::lock_guard lock(session_mu_);
      std::error_code ec;
      if (fs::exists(session->file)) {
        if (record.consent_to_store) {
          fs::rename(session->file, retention_dir_ / session->file.filename(), ec);
          retained = !ec;
        } else {
          fs::remove(session->file, ec);
        }
      } else {
        retained = record.consent_to_store && fs::exists(retention_dir_ / session->file.filename());
      }
      if (!record.consent_to_store) {
        fs::remove(retention_dir_ / session->file.filename(), ec);
      }
    }
    send_json(res, 200, {{"status", "recorded"}, {"image_id", id}, {"retained", retained}});
  });

  if (!config_.static_dir.empty() && !svr.set_mount_point("/", config_.static_dir.string()))
    throw ConfigError("static directory not found: " + config_.static_dir.string());
}

int InferenceService::bind() {
  if (port_ >= 0) return port_;
  if (config_.port == 0) {
    port_ = server_->bind_to_any_port(config_.host);
  } else {
    port_ = server_->bind_to_port(config_.host, config_.port) ? config_.port : -1;
  }
  if (port_ < 0) throw Error("cannot bind " + config_.host + ":" + std::to_string(config_.port));
  return port_;
}

void InferenceService::run() {
  bind();
  server_->listen_after_bind();
}

void InferenceService::start() {
  bind();
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

void InferenceService::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace habitat
