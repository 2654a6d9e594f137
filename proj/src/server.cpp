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

#include "convis/server.hpp"

#include <httplib.h>
#include <pthread.h>
#include <signal.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <future>
#include <iomanip>
#include <sstream>

#include "convis/error.hpp"

namespace convis::server {

using json = nlohmann::json;

namespace {

class Timeout : public Error {
 public:
  using Error::Error;
};

class PayloadTooLarge : public Error {
 public:
  using Error::Error;
};

class Unavailable : public Error {
 public:
  using Error::Error;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw InvalidArgument("bad value for " + key + ": " + v);
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw InvalidArgument("");
    return d;
  } catch (const std::exception&) {
    throw InvalidArgument("bad value for " + key + ": " + v);
  }
}

std::int64_t now_seconds() {
  return std::chrono::duration_cast<std::chrono::seconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

Response json_response(int status, const json& body) {
  Response r;
  r.status = status;
  r.body = body.dump();
  return r;
}

Response error_response(int status, const std::string& code, const std::string& message) {
  return json_response(status, {{"code", code}, {"message", message}});
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : path) {
    if (c == '/') {
      if (!cur.empty()) parts.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) parts.push_back(std::move(cur));
  return parts;
}

std::optional<std::string> query_value(const std::multimap<std::string, std::string>& q,
                                       const std::string& key) {
  auto it = q.find(key);
  if (it == q.end()) return std::nullopt;
  return it->second;
}

bool valid_hex_id(const std::string& id) {
  return id.size() == 64 &&
         std::all_of(id.begin(), id.end(), [](char c) { return std::isxdigit(static_cast<unsigned char>(c)) && !std::isupper(static_cast<unsigned char>(c)); });
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void Config::validate() const {
  if (lexicon_path.empty()) throw ValidationError("config: lexicon_path is required");
  if (!std::filesystem::is_regular_file(lexicon_path)) {
    throw ValidationError("config: lexicon file not found: " + lexicon_path.string());
  }
  if (!seed_path.empty() && !std::filesystem::is_regular_file(seed_path)) {
    throw ValidationError("config: seed file not found: " + seed_path.string());
  }
  if (!quiz_path.empty() && !std::filesystem::is_regular_file(quiz_path)) {
    throw ValidationError("config: quiz dataset not found: " + quiz_path.string());
  }
  if (port < 0 || port > 65535) throw ValidationError("config: port out of range");
  if (!(request_timeout_s > 0.0)) throw ValidationError("config: request_timeout_s must be positive");
  if (max_upload_bytes == 0) throw ValidationError("config: max_upload_bytes must be positive");
  try {
    saliency.validate();
  } catch (const InvalidArgument& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
}

Config parse_config(const std::string& text, const std::filesystem::path& base_dir) {
  Config cfg;
  auto path_of = [&](const std::string& v) {
    std::filesystem::path p(v);
    return p.empty() || p.is_absolute() || base_dir.empty() ? p : base_dir / p;
  };
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("config", lineno, "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string v = trim(line.substr(eq + 1));
    try {
      if (key == "host") cfg.host = v;
      else if (key == "port") cfg.port = parse_number<int>(key, v);
      else if (key == "lexicon_path") cfg.lexicon_path = path_of(v);
      else if (key == "seed_path") cfg.seed_path = path_of(v);
      else if (key == "backend") cfg.backend = v;
      else if (key == "model_path") cfg.model_path = path_of(v).string();
      else if (key == "model_url") cfg.model_url = v;
      else if (key == "model_id") cfg.model_id = v;
      else if (key == "dimension") cfg.dimension = parse_number<std::size_t>(key, v);
      else if (key == "input_resolution") cfg.input_resolution = parse_number<int>(key, v);
      else if (key == "cache_dir") cfg.cache_dir = path_of(v);
      else if (key == "delta_s" || key == "delta_small") cfg.saliency.delta_small = parse_number<int>(key, v);
      else if (key == "delta_l" || key == "delta_large") cfg.saliency.delta_large = parse_number<int>(key, v);
      else if (key == "omega" || key == "stride") cfg.saliency.stride = parse_number<int>(key, v);
      else if (key == "window_mode") cfg.saliency.window_mode = saliency::window_mode_from_string(v);
      else if (key == "boundary_policy") cfg.saliency.boundary_policy = saliency::boundary_policy_from_string(v);
      else if (key == "quiz_path") cfg.quiz_path = path_of(v);
      else if (key == "image_dir") cfg.image_dir = path_of(v);
      else if (key == "request_timeout_s") cfg.request_timeout_s = parse_double(key, v);
      else if (key == "max_upload_bytes") cfg.max_upload_bytes = parse_number<std::size_t>(key, v);
      else if (key == "seed") cfg.seed = parse_number<std::uint64_t>(key, v);
      else if (key == "workers") cfg.workers = parse_number<unsigned>(key, v);
      else throw ParseError("config", lineno, "unknown key '" + key + "'");
    } catch (const InvalidArgument& e) {
      throw ParseError("config", lineno, e.what());
    }
  }
  return cfg;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFound("cannot open config file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  Config cfg;
  try {
    cfg = parse_config(ss.str(), path.parent_path());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  if (const char* env = std::getenv("CONVIS_CACHE_DIR"); env && *env) cfg.cache_dir = env;
  return cfg;
}

std::filesystem::path effective_cache_dir(const Config& cfg) {
  return cfg.cache_dir.empty() ? default_cache_dir() : cfg.cache_dir;
}

encoder::BackendSpec backend_spec(const Config& cfg) {
  encoder::BackendSpec spec;
  if (cfg.backend.find(':') != std::string::npos) {
    spec = encoder::parse_backend_spec(cfg.backend);
  } else {
    spec.kind = encoder::backend_kind_from_string(cfg.backend);
  }
  if (!cfg.model_path.empty()) spec.model_path = cfg.model_path;
  if (!cfg.model_url.empty()) spec.url = cfg.model_url;
  if (!cfg.model_id.empty()) spec.model_id = cfg.model_id;
  if (cfg.dimension != 0) spec.dimension = cfg.dimension;
  if (cfg.input_resolution >= 0) spec.input_resolution = cfg.input_resolution;
  return spec;
}

Pipeline build_pipeline(const Config& cfg, std::shared_ptr<encoder::EncoderBackend> backend) {
  cfg.validate();
  Pipeline p;
  const auto lexicon = lexdb::load_lexicon(cfg.lexicon_path);
  if (cfg.seed_path.empty()) {
    p.hierarchy = std::make_shared<lexdb::Hierarchy>(lexicon);
  } else {
    p.hierarchy = std::make_shared<lexdb::Hierarchy>(
        lexdb::filter_hierarchy(lexicon, lexdb::load_seed_list(cfg.seed_path)));
  }
  p.backend = backend ? std::move(backend) : encoder::make_backend(backend_spec(cfg));
  p.defmat = std::make_shared<simcore::DefinitionMatrix>(simcore::build_definition_matrix(
      *p.hierarchy, *p.backend, effective_cache_dir(cfg), &p.build_stats));
  return p;
}

std::vector<QuizItem> load_quiz_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFound("cannot open quiz dataset: " + path.string());
  std::vector<QuizItem> items;
  try {
    const json doc = json::parse(in);
    if (!doc.is_array()) throw ParseError("quiz dataset must be a JSON list");
    for (const auto& e : doc) {
      QuizItem it;
      std::filesystem::path img(e.at("image").get<std::string>());
      it.image = img.is_absolute() ? img : path.parent_path() / img;
      it.captions = e.at("captions").get<std::vector<std::string>>();
      it.answer = e.at("answer").get<int>();
      if (it.captions.size() != 4) throw ValidationError("quiz item needs exactly four captions");
      if (it.answer < 0 || it.answer > 3) throw ValidationError("quiz answer must be 0..3");
      items.push_back(std::move(it));
    }
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return items;
}

std::string to_string(PrecomputeStatus s) {
  switch (s) {
    case PrecomputeStatus::kNone: return "none";
    case PrecomputeStatus::kRunning: return "running";
    case PrecomputeStatus::kDone: return "done";
  }
  return "none";
}

// ---------------------------------------------------------------------------
// Service

namespace {

unsigned resolve_workers(unsigned w) {
  if (w != 0) return w;
  return std::max(1u, std::thread::hardware_concurrency());
}

constexpr std::size_t kRanksCapacity = 8;

}  // namespace

Service::Service(Config cfg, std::shared_ptr<encoder::EncoderBackend> backend)
    : cfg_(std::move(cfg)),
      pipeline_(build_pipeline(cfg_, std::move(backend))),
      patches_(saliency::PatchCache::Options{effective_cache_dir(cfg_) / "patches", 32,
                                             resolve_workers(cfg_.workers)}),
      image_dir_(cfg_.image_dir.empty() ? effective_cache_dir(cfg_) / "images" : cfg_.image_dir),
      rng_(cfg_.seed) {
  std::filesystem::create_directories(image_dir_);
  std::filesystem::create_directories(effective_cache_dir(cfg_) / "patches");
  if (!cfg_.quiz_path.empty()) quiz_items_ = load_quiz_dataset(cfg_.quiz_path);
}

Service::~Service() {
  std::vector<Job> jobs;
  {
    std::lock_guard lock(jobs_mu_);
    jobs.swap(jobs_);
  }
  for (auto& j : jobs) {
    if (j.thread.joinable()) j.thread.join();
  }
}

void Service::launch(std::function<void()> fn) {
  std::lock_guard lock(jobs_mu_);
  std::erase_if(jobs_, [](Job& j) {
    if (!j.finished->load()) return false;
    j.thread.join();
    return true;
  });
  auto flag = std::make_shared<std::atomic<bool>>(false);
  jobs_.push_back(Job{std::thread([fn = std::move(fn), flag] {
                        try {
                          fn();
                        } catch (...) {
                        }
                        flag->store(true);
                      }),
                      flag});
}

Response Service::handle(const std::string& method, const std::string& path, const Query& query,
                         const std::string& body, const std::string& filename) {
  try {
    const auto parts = split_path(path);
    if (parts.size() < 2 || parts[0] != "api" || parts[1] != "v1") {
      return error_response(404, "not_found", "no route for " + path);
    }
    const std::vector<std::string> p(parts.begin() + 2, parts.end());
    const bool get = method == "GET";
    const bool post = method == "POST";
    auto bad_method = [&] { return error_response(405, "method_not_allowed", method + " " + path); };

    if (p.size() == 1 && p[0] == "health") return get ? health() : bad_method();
    if (!p.empty() && p[0] == "images") {
      if (p.size() == 1) return post ? upload(body, filename) : bad_method();
      if (p.size() == 2) return get ? get_image(p[1]) : bad_method();
      if (p.size() == 3 && p[2] == "precompute") return post ? precompute(p[1], query) : bad_method();
      if (p.size() == 3 && p[2] == "top-concepts") return get ? top_concepts(p[1], query) : bad_method();
      if (p.size() == 4 && p[2] == "saliency") return get ? saliency(p[1], p[3], query) : bad_method();
    }
    if (!p.empty() && p[0] == "concepts") {
      if (p.size() == 2 && p[1] == "search") return get ? search(query) : bad_method();
      if (p.size() == 2) return get ? concept_view(p[1]) : bad_method();
    }
    if (p.size() >= 2 && p[0] == "quiz" && p[1] == "sessions") {
      if (p.size() == 2) return post ? quiz_new() : bad_method();
      if (p.size() == 3) return get ? quiz_get(p[2]) : bad_method();
      if (p.size() == 4 && p[3] == "answer") return post ? quiz_answer(p[2], body) : bad_method();
      if (p.size() == 4 && p[3] == "top-concepts") {
        return get ? top_concepts(quiz_image(p[2]), query) : bad_method();
      }
      if (p.size() == 5 && p[3] == "saliency") {
        return get ? saliency(quiz_image(p[2]), p[4], query, p[2]) : bad_method();
      }
    }
    return error_response(404, "not_found", "no route for " + path);
  } catch (const NotFound& e) {
    return error_response(404, "not_found", e.what());
  } catch (const Conflict& e) {
    return error_response(409, "conflict", e.what());
  } catch (const PayloadTooLarge& e) {
    return error_response(413, "payload_too_large", e.what());
  } catch (const Timeout& e) {
    return error_response(504, "timeout", e.what());
  } catch (const Unavailable& e) {
    return error_response(503, "unavailable", e.what());
  } catch (const BackendError& e) {
    return error_response(503, "backend_unavailable", e.what());
  } catch (const ParseError& e) {
    return error_response(400, "bad_request", e.what());
  } catch (const InvalidArgument& e) {
    return error_response(400, "invalid_argument", e.what());
  } catch (const ValidationError& e) {
    return error_response(400, "invalid_argument", e.what());
  } catch (const std::exception& e) {
    return error_response(500, "internal", e.what());
  }
}

Response Service::health() const {
  return json_response(200, {{"status", "ok"},
                             {"hierarchy_size", pipeline_.hierarchy->size()},
                             {"model_id", pipeline_.backend->model_id()}});
}

std::string Service::store_image(const std::vector<std::uint8_t>& bytes, const std::string& filename) {
  if (bytes.size() > cfg_.max_upload_bytes) {
    throw PayloadTooLarge("upload exceeds " + std::to_string(cfg_.max_upload_bytes) + " bytes");
  }
  if (bytes.empty()) throw ParseError("empty upload: not a PNG or JPEG image");
  const std::string id = sha256_hex(std::span<const std::uint8_t>(bytes));
  {
    std::lock_guard lock(mu_);
    if (images_.contains(id)) return id;
  }
  const Image img = decode_image(bytes);  // throws ParseError on garbage
  ImageRecord rec;
  rec.id = id;
  rec.pixel_sha = image_sha256(img);
  rec.filename = filename;
  rec.width = img.width();
  rec.height = img.height();
  rec.uploaded_at = now_seconds();

  const auto data_path = image_dir_ / (id + ".img");
  if (!std::filesystem::exists(data_path)) write_file_bytes(data_path, bytes);
  const json meta = {{"id", rec.id},       {"pixel_sha256", rec.pixel_sha}, {"filename", rec.filename},
                     {"width", rec.width}, {"height", rec.height},          {"uploaded_at", rec.uploaded_at}};
  const auto meta_path = image_dir_ / (id + ".json");
  if (!std::filesystem::exists(meta_path)) {
    const std::string s = meta.dump();
    write_file_bytes(meta_path, std::span<const std::uint8_t>(
                                    reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
  }
  std::lock_guard lock(mu_);
  images_.try_emplace(id, std::move(rec));
  return id;
}

Response Service::upload(const std::string& body, const std::string& filename) {
  std::vector<std::uint8_t> bytes(body.begin(), body.end());
  const std::string id = store_image(bytes, filename);
  std::lock_guard lock(mu_);
  return json_response(201, record_json(images_.at(id)));
}

json Service::record_json(const ImageRecord& r) const {
  json status = json::object();
  for (const auto& [key, s] : r.status) status[key.substr(0, 24)] = to_string(s);
  const std::string default_key =
      saliency::PatchCache::key(r.pixel_sha, cfg_.saliency, pipeline_.backend->model_id());
  auto it = r.status.find(default_key);
  return {{"id", r.id},
          {"filename", r.filename},
          {"width", r.width},
          {"height", r.height},
          {"uploaded_at", r.uploaded_at},
          {"precompute_status", it == r.status.end() ? "none" : to_string(it->second)},
          {"precompute", status}};
}

Image Service::image_pixels(const std::string& id) {
  if (!valid_hex_id(id)) throw NotFound("unknown image " + id);
  {
    std::lock_guard lock(mu_);
    if (!images_.contains(id)) {
      // Uploaded by an earlier process: rehydrate the record from disk.
      const auto meta_path = image_dir_ / (id + ".json");
      if (!std::filesystem::exists(meta_path)) throw NotFound("unknown image " + id);
      const auto raw = read_file_bytes(meta_path);
      const json meta = json::parse(raw.begin(), raw.end());
      ImageRecord rec;
      rec.id = id;
      rec.pixel_sha = meta.at("pixel_sha256").get<std::string>();
      rec.filename = meta.value("filename", "");
      rec.width = meta.at("width").get<int>();
      rec.height = meta.at("height").get<int>();
      rec.uploaded_at = meta.value("uploaded_at", std::int64_t{0});
      images_.emplace(id, std::move(rec));
    }
  }
  return decode_image(read_file_bytes(image_dir_ / (id + ".img")));
}

Response Service::get_image(const std::string& id) {
  image_pixels(id);
  std::lock_guard lock(mu_);
  return json_response(200, record_json(images_.at(id)));
}

saliency::SaliencyConfig Service::saliency_config(const Query& q) const {
  saliency::SaliencyConfig c = cfg_.saliency;
  if (auto v = query_value(q, "delta_s")) c.delta_small = parse_number<int>("delta_s", *v);
  if (auto v = query_value(q, "delta_l")) c.delta_large = parse_number<int>("delta_l", *v);
  if (auto v = query_value(q, "omega")) c.stride = parse_number<int>("omega", *v);
  if (auto v = query_value(q, "window_mode")) c.window_mode = saliency::window_mode_from_string(*v);
  if (auto v = query_value(q, "boundary_policy")) {
    c.boundary_policy = saliency::boundary_policy_from_string(*v);
  }
  c.validate();
  return c;
}

void Service::set_status(const std::string& id, const std::string& key, PrecomputeStatus s) {
  std::lock_guard lock(mu_);
  auto& rec = images_.at(id);
  auto it = rec.status.find(key);
  const PrecomputeStatus cur = it == rec.status.end() ? PrecomputeStatus::kNone : it->second;
  if (static_cast<int>(s) > static_cast<int>(cur)) rec.status[key] = s;
}

std::shared_ptr<const saliency::LocationRanks> Service::location_ranks(
    const std::string& id, const saliency::SaliencyConfig& cfg, bool* cache_hit) {
  const Image img = image_pixels(id);
  std::string pixel_sha;
  {
    std::lock_guard lock(mu_);
    pixel_sha = images_.at(id).pixel_sha;
  }
  const std::string key = saliency::PatchCache::key(pixel_sha, cfg, pipeline_.backend->model_id());
  {
    std::lock_guard lock(ranks_mu_);
    if (auto it = ranks_.find(key); it != ranks_.end()) {
      if (cache_hit) *cache_hit = true;
      return it->second;
    }
  }
  set_status(id, key, PrecomputeStatus::kRunning);
  bool hit = false;
  std::shared_ptr<const saliency::LocationRanks> ranks;
  try {
    auto patches = patches_.get_or_compute(img, cfg, *pipeline_.backend, &hit);
    ranks = std::make_shared<const saliency::LocationRanks>(*patches, *pipeline_.defmat,
                                                           resolve_workers(cfg_.workers));
  } catch (...) {
    // A failed run leaves nothing cached; forget it so precompute can retry.
    std::lock_guard lock(mu_);
    auto& st = images_.at(id).status;
    if (auto it = st.find(key); it != st.end() && it->second == PrecomputeStatus::kRunning) st.erase(it);
    throw;
  }
  set_status(id, key, PrecomputeStatus::kDone);
  if (cache_hit) *cache_hit = hit;
  std::lock_guard lock(ranks_mu_);
  auto [it, inserted] = ranks_.try_emplace(key, ranks);
  if (inserted) {
    ranks_order_.push_back(key);
    if (ranks_order_.size() > kRanksCapacity) {
      ranks_.erase(ranks_order_.front());
      ranks_order_.erase(ranks_order_.begin());
    }
  }
  return it->second;
}

Response Service::precompute(const std::string& id, const Query& q) {
  image_pixels(id);
  const auto cfg = saliency_config(q);
  std::string key;
  PrecomputeStatus cur = PrecomputeStatus::kNone;
  {
    std::lock_guard lock(mu_);
    auto& rec = images_.at(id);
    key = saliency::PatchCache::key(rec.pixel_sha, cfg, pipeline_.backend->model_id());
    if (auto it = rec.status.find(key); it != rec.status.end()) cur = it->second;
  }
  if (cur == PrecomputeStatus::kNone) {
    set_status(id, key, PrecomputeStatus::kRunning);
    launch([this, id, cfg] { location_ranks(id, cfg, nullptr); });
    cur = PrecomputeStatus::kRunning;
  }
  return json_response(cur == PrecomputeStatus::kDone ? 200 : 202,
                       {{"id", id}, {"status", to_string(cur)}, {"key", key.substr(0, 24)}});
}

Response Service::saliency(const std::string& id, const std::string& synset, const Query& q,
                           const std::string& session) {
  if (!pipeline_.hierarchy->contains(synset)) throw NotFound("unknown synset " + synset);
  const auto cfg = saliency_config(q);
  const std::string format = query_value(q, "format").value_or("png");
  if (format != "png" && format != "cvis") throw InvalidArgument("format must be png or cvis");
  image_pixels(id);

  const auto t0 = std::chrono::steady_clock::now();
  auto state = std::make_shared<std::promise<std::pair<std::shared_ptr<const saliency::LocationRanks>, bool>>>();
  auto fut = state->get_future();
  launch([this, state, id, cfg] {
    try {
      bool hit = false;
      auto r = location_ranks(id, cfg, &hit);
      state->set_value({std::move(r), hit});
    } catch (...) {
      state->set_exception(std::current_exception());
    }
  });
  if (fut.wait_for(std::chrono::duration<double>(cfg_.request_timeout_s)) != std::future_status::ready) {
    throw Timeout("saliency computation exceeded " + std::to_string(cfg_.request_timeout_s) +
                  " s; it continues in the background");
  }
  auto [ranks, hit] = fut.get();
  auto grid = ranks->score_grid(synset, *pipeline_.hierarchy, *pipeline_.defmat);
  grid.config = cfg;
  auto map = saliency::aggregate(grid);
  map.synset = synset;
  map.image_id = session.empty() ? id : std::string();
  const double ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

  const auto [lo, hi] = std::minmax_element(map.values.begin(), map.values.end());
  json meta = {{"synset", synset},
                     {"width", map.width},
                     {"height", map.height},
                     {"min", *lo},
                     {"max", *hi},
                     {"tau_suggestion", 0.5 * (*lo + *hi)},
                     {"timing_ms", ms},
                     {"cache_hit", hit},
                     {"config",
                      {{"delta_s", cfg.delta_small},
                       {"delta_l", cfg.delta_large},
                       {"omega", cfg.stride},
                       {"window_mode", saliency::to_string(cfg.window_mode)},
                       {"boundary_policy", saliency::to_string(cfg.boundary_policy)}}}};
  // Quiz sessions never learn the hidden image id.
  if (session.empty()) meta["image_id"] = id;
  else meta["session_id"] = session;
  Response r;
  std::vector<std::uint8_t> bytes;
  if (format == "png") {
    bytes = encode_png(saliency::to_gray_image(map));
    r.content_type = "image/png";
  } else {
    bytes = saliency::encode_cvis(map);
    r.content_type = "application/octet-stream";
  }
  r.body.assign(bytes.begin(), bytes.end());
  r.headers.emplace_back("X-Convis-Meta", meta.dump());
  return r;
}

Response Service::top_concepts(const std::string& id, const Query& q) {
  std::size_t k = 10;
  if (auto v = query_value(q, "k")) k = parse_number<std::size_t>("k", *v);
  if (k == 0) throw InvalidArgument("k must be >= 1");
  const Image img = image_pixels(id);
  encoder::Embedding x;
  {
    std::lock_guard lock(mu_);
    if (auto it = whole_image_.find(id); it != whole_image_.end()) x = it->second;
  }
  if (x.empty()) {
    x = pipeline_.backend->embed_image(img);
    std::lock_guard lock(mu_);
    whole_image_.emplace(id, x);
  }
  json list = json::array();
  for (const auto& [sid, score] : simcore::top_concepts(x, *pipeline_.defmat, k)) {
    list.push_back({{"id", sid},
                    {"rank_sim", score.value()},
                    {"lemmas", pipeline_.hierarchy->at(sid).lemmas}});
  }
  return json_response(200, {{"k", k}, {"concepts", list}});
}

Response Service::concept_view(const std::string& id) const {
  const auto& hier = *pipeline_.hierarchy;
  const auto& s = hier.at(id);
  return json_response(200, {{"id", s.id},
                             {"lemmas", s.lemmas},
                             {"definition", s.definition},
                             {"parents", s.hypernym_ids},
                             {"children", hier.children_ids(id)},
                             {"ancestors", lexdb::ancestors(hier, id)}});
}

Response Service::search(const Query& q) const {
  const std::string query = query_value(q, "q").value_or("");
  if (trim(query).empty()) throw InvalidArgument("query parameter q is required");
  std::size_t limit = 20;
  if (auto v = query_value(q, "limit")) limit = parse_number<std::size_t>("limit", *v);
  if (limit == 0 || limit > 1000) throw InvalidArgument("limit must be in 1..1000");
  json results = json::array();
  for (const auto& id : lexdb::search(*pipeline_.hierarchy, query, limit)) {
    const auto& s = pipeline_.hierarchy->at(id);
    results.push_back({{"id", id}, {"lemmas", s.lemmas}, {"definition", s.definition}});
  }
  return json_response(200, {{"query", query}, {"results", results}});
}

json Service::session_json(const QuizSession& s) const {
  json j = {{"session_id", s.id}, {"captions", s.captions}, {"answered", s.answered}};
  if (s.answered) {
    j["correct"] = s.outcome;
    j["correct_index"] = s.correct;
  }
  return j;
}

Response Service::quiz_new() {
  if (quiz_items_.empty()) throw Unavailable("no quiz dataset configured");
  std::size_t pick = 0;
  std::vector<int> order{0, 1, 2, 3};
  {
    std::lock_guard lock(mu_);
    pick = std::uniform_int_distribution<std::size_t>(0, quiz_items_.size() - 1)(rng_);
    std::shuffle(order.begin(), order.end(), rng_);
  }
  const auto& item = quiz_items_[pick];
  const std::string image_id = store_image(read_file_bytes(item.image), item.image.filename().string());
  QuizSession s;
  std::random_device rd;
  std::ostringstream sid;
  for (int i = 0; i < 4; ++i) sid << std::hex << std::setw(8) << std::setfill('0') << rd();
  s.id = sid.str();
  s.image_id = image_id;
  for (int k = 0; k < 4; ++k) {
    s.captions.push_back(item.captions[order[k]]);
    if (order[k] == item.answer) s.correct = k;
  }
  std::lock_guard lock(mu_);
  auto [it, ok] = sessions_.emplace(s.id, s);
  if (!ok) throw Conflict("session id collision");
  return json_response(201, session_json(it->second));
}

std::string Service::quiz_image(const std::string& session_id) {
  std::lock_guard lock(mu_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw NotFound("unknown quiz session " + session_id);
  return it->second.image_id;
}

Response Service::quiz_get(const std::string& id) {
  std::lock_guard lock(mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw NotFound("unknown quiz session " + id);
  return json_response(200, session_json(it->second));
}

Response Service::quiz_answer(const std::string& id, const std::string& body) {
  int choice = -1;
  try {
    const json doc = json::parse(body);
    choice = doc.at("choice").get<int>();
  } catch (const json::exception&) {
    throw InvalidArgument("body must be {\"choice\": 0..3}");
  }
  if (choice < 0 || choice > 3) throw InvalidArgument("choice must be 0..3");
  std::lock_guard lock(mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw NotFound("unknown quiz session " + id);
  auto& s = it->second;
  if (s.answered) throw Conflict("session " + id + " already answered");
  s.answered = true;
  s.outcome = choice == s.correct;
  return json_response(200, session_json(s));
}

// ---------------------------------------------------------------------------
// HTTP binding

void serve(Service& service) {
  httplib::Server svr;
  const auto& cfg = service.config();
  svr.set_payload_max_length(cfg.max_upload_bytes + (1u << 20));
  // httplib defaults to SO_REUSEPORT, which lets a second server share the
  // port silently. Plain SO_REUSEADDR makes a busy port a bind error.
  svr.set_socket_options([](int sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
  });
  const auto timeout = static_cast<time_t>(std::ceil(cfg.request_timeout_s)) + 5;
  svr.set_read_timeout(timeout, 0);
  svr.set_write_timeout(timeout, 0);

  auto handler = [&service](const httplib::Request& req, httplib::Response& res) {
    std::string body = req.body;
    std::string filename;
    if (req.is_multipart_form_data()) {
      for (const char* field : {"file", "image"}) {
        if (req.has_file(field)) {
          const auto f = req.get_file_value(field);
          body = f.content;
          filename = f.filename;
          break;
        }
      }
    } else if (req.has_header("X-Filename")) {
      filename = req.get_header_value("X-Filename");
    }
    const Response r = service.handle(req.method, req.path, req.params, body, filename);
    res.status = r.status;
    for (const auto& [k, v] : r.headers) res.set_header(k, v);
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Expose-Headers", "X-Convis-Meta");
    res.set_content(r.body, r.content_type);
  };
  svr.Get(".*", handler);
  svr.Post(".*", handler);
  svr.Put(".*", handler);
  svr.Delete(".*", handler);

  if (!svr.bind_to_port(cfg.host, cfg.port)) {
    throw Error("cannot bind " + cfg.host + ":" + std::to_string(cfg.port) + " (port busy?)");
  }

  // Signals are taken synchronously on a watcher thread; request threads
  // inherit the blocked mask.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  sigset_t old;
  pthread_sigmask(SIG_BLOCK, &set, &old);
  std::atomic<bool> done{false};
  std::thread watcher([&] {
    timespec ts{0, 200'000'000};
    while (!done.load()) {
      if (sigtimedwait(&set, nullptr, &ts) > 0) {
        svr.stop();
        return;
      }
    }
  });
  svr.listen_after_bind();
  done.store(true);
  watcher.join();
  pthread_sigmask(SIG_SETMASK, &old, nullptr);
}

}  // namespace convis::server
