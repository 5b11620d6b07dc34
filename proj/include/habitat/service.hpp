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

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include <json.hpp>

#include "habitat/checkpoint.hpp"
#include "habitat/preprocess.hpp"
#include "habitat/taxonomy.hpp"

namespace httplib {
class Server;
}

namespace habitat {

struct ServiceConfig {
  std::filesystem::path checkpoint;  ///< empty: start without a model (predict/health answer 503)
  std::filesystem::path taxonomy;    ///< empty: the built-in 18-class taxonomy
  std::string host = "127.0.0.1";
  int port = 8080;  ///< 0 picks a free port
  std::size_t max_upload_bytes = 20u * 1024u * 1024u;
  /// Root for sessions/, retention/ and logs/ unless overridden below.
  std::filesystem::path data_dir = "habitat_service";
  std::filesystem::path session_dir;
  std::filesystem::path retention_dir;
  std::filesystem::path log_dir;
  std::chrono::seconds session_ttl{3600};
  std::uint64_t log_rotate_bytes = 50ull * 1024ull * 1024ull;
  std::string auth_token;  ///< non-empty: /predict and /feedback require "Authorization: Bearer <token>"
  std::string cors_origin = "*";
  std::filesystem::path static_dir;  ///< optional directory served at /
  PreprocessConfig preprocess;

  void validate() const;
};

enum class Verdict { confirm, correct, custom };
std::string_view to_string(Verdict v);

struct FeedbackRecord {
  std::string timestamp;  ///< UTC, ISO 8601
  std::string image_id;
  std::string predicted_label;
  Verdict verdict = Verdict::confirm;
  std::optional<std::string> corrected_label;
  std::optional<std::string> custom_label;
  double confidence_shown = 0.0;
  bool consent_to_store = false;
};

/// Parses a feedback payload; accepts "verdict" or "user_verdict" and
/// "consent" or "consent_to_store". Throws ValidationError when the record
/// breaks its invariants.
FeedbackRecord parse_feedback(const nlohmann::json& payload, const ClassTaxonomy& taxonomy);
nlohmann::json feedback_to_json(const FeedbackRecord& r);

/// Appends each record to feedback.csv and feedback.jsonl under one lock.
/// When either file would exceed the rotation size both are renamed with the
/// next free numeric suffix, so every generation holds matching entries.
class FeedbackLog {
 public:
  static constexpr const char* kCsvHeader =
      "timestamp,image_id,predicted_label,verdict,corrected_label,custom_label,confidence_shown,consent";

  FeedbackLog(std::filesystem::path dir, std::uint64_t rotate_bytes);

  void append(const FeedbackRecord& record);
  std::filesystem::path csv_path() const { return dir_ / "feedback.csv"; }
  std::filesystem::path json_path() const { return dir_ / "feedback.jsonl"; }

 private:
  void rotate();

  std::filesystem::path dir_;
  std::uint64_t rotate_bytes_;
  std::mutex mu_;
};

std::string utc_timestamp(std::chrono::system_clock::time_point t = std::chrono::system_clock::now());

class InferenceService {
 public:
  explicit InferenceService(ServiceConfig config);
  ~InferenceService();
  InferenceService(const InferenceService&) = delete;
  InferenceService& operator=(const InferenceService&) = delete;

  /// Loads (or replaces) the served checkpoint; it must match the taxonomy.
  void load_model(const std::filesystem::path& checkpoint);
  bool has_model() const;
  std::string model_version() const;
  const ClassTaxonomy& taxonomy() const noexcept { return taxonomy_; }
  const ServiceConfig& config() const noexcept { return config_; }

  /// Binds the listening socket and returns the port.
  int bind();
  /// Serves until stop(); binds first if needed.
  void run();
  /// run() on a background thread; returns once the server accepts requests.
  void start();
  void stop();
  int port() const noexcept { return port_; }

  /// Drops sessions older than the TTL and deletes their temporary images.
  std::size_t purge_expired();
  std::size_t session_count() const;

 private:
  struct Session {
    std::filesystem::path file;
    std::string predicted_label;
    double confidence = 0.0;
    std::chrono::steady_clock::time_point created;
  };
  struct Model {
    std::shared_ptr<const Classifier> classifier;
    CheckpointMetadata meta;
  };

  void install_routes();
  std::shared_ptr<const Model> current_model() const;
  std::string new_image_id();

  ServiceConfig config_;
  ClassTaxonomy taxonomy_;
  std::string classes_body_;
  std::unique_ptr<httplib::Server> server_;
  std::unique_ptr<FeedbackLog> feedback_;
  std::filesystem::path session_dir_, retention_dir_;

  mutable std::mutex model_mu_;
  std::shared_ptr<const Model> model_;

  mutable std::mutex session_mu_;
  std::map<std::string, Session> sessions_;
  std::uint64_t id_state_;

  std::chrono::steady_clock::time_point started_;
  int port_ = -1;
  std::thread thread_;
};

}  // namespace habitat
