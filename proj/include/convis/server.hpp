/*
 * Copyright 2026 The ConVis Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "convis/encoder.hpp"
#include "convis/lexdb.hpp"
#include "convis/saliency.hpp"
#include "convis/simcore.hpp"

namespace convis::server {

// Plain-text "key = value" configuration; '#' starts a comment. Relative
// paths resolve against the directory of the config file.
struct Config {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path lexicon_path;
  std::filesystem::path seed_path;  // empty: whole lexicon
  std::string backend = "mock-hash";
  std::string model_path;
  std::string model_url;
  std::string model_id;
  std::size_t dimension = 0;
  int input_resolution = -1;
  std::filesystem::path cache_dir;  // empty: default_cache_dir()
  saliency::SaliencyConfig saliency;
  std::filesystem::path quiz_path;
  std::filesystem::path image_dir;  // empty: <cache_dir>/images
  double request_timeout_s = 120.0;
  std::size_t max_upload_bytes = 32u << 20;
  std::uint64_t seed = 0;
  unsigned workers = 0;  // 0: hardware concurrency

  // Throws ValidationError for a missing lexicon or bad numeric ranges.
  void validate() const;
};

Config parse_config(const std::string& text, const std::filesystem::path& base_dir = {});
// Applies the CONVIS_CACHE_DIR override after parsing.
Config load_config(const std::filesystem::path& path);
std::filesystem::path effective_cache_dir(const Config& cfg);
encoder::BackendSpec backend_spec(const Config& cfg);

// Hierarchy, backend and definition matrix built from one config.
struct Pipeline {
  std::shared_ptr<const lexdb::Hierarchy> hierarchy;
  std::shared_ptr<encoder::EncoderBackend> backend;
  std::shared_ptr<const simcore::DefinitionMatrix> defmat;
  simcore::BuildStats build_stats;
};

Pipeline build_pipeline(const Config& cfg, std::shared_ptr<encoder::EncoderBackend> backend = nullptr);

struct QuizItem {
  std::filesystem::path image;
  std::vector<std::string> captions;  // exactly four
  int answer = 0;
};

// JSON list of {"image", "captions": [4 strings], "answer": 0..3}.
std::vector<QuizItem> load_quiz_dataset(const std::filesystem::path& path);

struct Response {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
  std::vector<std::pair<std::string, std::string>> headers;
};

enum class PrecomputeStatus { kNone, kRunning, kDone };
std::string to_string(PrecomputeStatus s);

class Service {
 public:
  explicit Service(Config cfg, std::shared_ptr<encoder::EncoderBackend> backend = nullptr);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Routes one request under /api/v1. `query` holds decoded query parameters.
  Response handle(const std::string& method, const std::string& path,
                  const std::multimap<std::string, std::string>& query, const std::string& body,
                  const std::string& filename = {});

  const Config& config() const noexcept { return cfg_; }
  const lexdb::Hierarchy& hierarchy() const noexcept { return *pipeline_.hierarchy; }
  const simcore::DefinitionMatrix& definitions() const noexcept { return *pipeline_.defmat; }
  encoder::EncoderBackend& backend() noexcept { return *pipeline_.backend; }
  saliency::PatchCache& patch_cache() noexcept { return patches_; }

 private:
  struct ImageRecord {
    std::string id;         // SHA-256 of the uploaded bytes
    std::string pixel_sha;  // canonical pixel hash, keys the patch cache
    std::string filename;
    int width = 0;
    int height = 0;
    std::int64_t uploaded_at = 0;  // unix seconds
    std::map<std::string, PrecomputeStatus> status;  // keyed by patch cache key
  };
  struct QuizSession {
    std::string id;
    std::string image_id;
    std::vector<std::string> captions;
    int correct = 0;
    bool answered = false;
    bool outcome = false;
  };
  using Query = std::multimap<std::string, std::string>;

  Response health() const;
  Response upload(const std::string& body, const std::string& filename);
  Response get_image(const std::string& id);
  Response precompute(const std::string& id, const Query& q);
  // `session` set: request made through a quiz session; the image id is withheld.
  Response saliency(const std::string& id, const std::string& synset, const Query& q,
                    const std::string& session = {});
  Response top_concepts(const std::string& id, const Query& q);
  Response concept_view(const std::string& id) const;
  Response search(const Query& q) const;
  Response quiz_new();
  Response quiz_get(const std::string& id);
  Response quiz_answer(const std::string& id, const std::string& body);
  std::string quiz_image(const std::string& session_id);

  std::string store_image(const std::vector<std::uint8_t>& bytes, const std::string& filename);
  Image image_pixels(const std::string& id);
  saliency::SaliencyConfig saliency_config(const Query& q) const;
  std::shared_ptr<const saliency::LocationRanks> location_ranks(
      const std::string& id, const saliency::SaliencyConfig& cfg, bool* cache_hit);
  void set_status(const std::string& id, const std::string& key, PrecomputeStatus s);
  nlohmann::json record_json(const ImageRecord& r) const;
  nlohmann::json session_json(const QuizSession& s) const;

  Config cfg_;
  Pipeline pipeline_;
  saliency::PatchCache patches_;
  std::filesystem::path image_dir_;
  std::vector<QuizItem> quiz_items_;

  std::mutex mu_;
  std::unordered_map<std::string, ImageRecord> images_;
  std::unordered_map<std::string, QuizSession> sessions_;
  std::unordered_map<std::string, encoder::Embedding> whole_image_;
  std::mt19937_64 rng_;

  std::mutex ranks_mu_;
  std::unordered_map<std::string, std::shared_ptr<const saliency::LocationRanks>> ranks_;
  std::vector<std::string> ranks_order_;

  struct Job {
    std::thread thread;
    std::shared_ptr<std::atomic<bool>> finished;
  };
  void launch(std::function<void()> fn);

  std::mutex jobs_mu_;
  std::vector<Job> jobs_;
};

// Binds `service` to host:port and blocks until SIGINT/SIGTERM. Throws
// Error when the port cannot be bound.
void serve(Service& service);

}  // namespace convis::server
