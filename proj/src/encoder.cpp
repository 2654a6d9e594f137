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

#include "convis/encoder.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <httplib.h>
#include <nlohmann/json.hpp>
#include <numbers>
#include <sstream>

#include "convis/error.hpp"

namespace convis::encoder {

using json = nlohmann::json;

std::string to_string(BackendKind kind) {
  switch (kind) {
    case BackendKind::kRuntimeModel: return "runtime-model";
    case BackendKind::kRemoteService: return "remote-service";
    case BackendKind::kMockHash: return "mock-hash";
    case BackendKind::kFixtureTable: return "fixture-table";
  }
  return "unknown";
}

BackendKind backend_kind_from_string(const std::string& name) {
  if (name == "runtime-model" || name == "runtime") return BackendKind::kRuntimeModel;
  if (name == "remote-service" || name == "remote") return BackendKind::kRemoteService;
  if (name == "mock-hash" || name == "mock") return BackendKind::kMockHash;
  if (name == "fixture-table" || name == "fixture") return BackendKind::kFixtureTable;
  throw InvalidArgument("unknown backend kind: " + name);
}

std::vector<Embedding> EncoderBackend::embed_text_batch(const std::vector<std::string>& texts) {
  std::vector<Embedding> out;
  out.reserve(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    try {
      out.push_back(embed_text(texts[i]));
    } catch (const std::exception& e) {
      throw BackendError("text batch item " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

std::vector<Embedding> EncoderBackend::embed_image_batch(const std::vector<Image>& images) {
  std::vector<Embedding> out;
  out.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    try {
      out.push_back(embed_image(images[i]));
    } catch (const std::exception& e) {
      throw BackendError("image batch item " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

Image preprocess_for(const EncoderBackend& backend, const Image& image) {
  if (image.empty()) throw InvalidArgument("cannot embed a zero-area image");
  const int res = backend.input_resolution();
  if (res <= 0) return image;
  return resize_bilinear(image, res, res);
}

double dot(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
  return acc;
}

double norm(std::span<const float> v) { return std::sqrt(dot(v, v)); }

void normalize(Embedding& v) {
  const double n = norm(v);
  if (!(n > 0.0) || !std::isfinite(n)) throw BackendError("embedding has zero or non-finite norm");
  for (auto& x : v) x = static_cast<float>(x / n);
}

double cosine(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw InvalidArgument("cosine: dimension mismatch (" + std::to_string(a.size()) + " vs " +
                          std::to_string(b.size()) + ")");
  }
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) throw InvalidArgument("cosine: zero vector");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t SplitMix64::next() noexcept {
  std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double SplitMix64::uniform() noexcept {
  // 53 random bits, shifted off zero.
  return (static_cast<double>(next() >> 11) + 0.5) * 0x1.0p-53;
}

double SplitMix64::normal() noexcept {
  const double u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// ---------------------------------------------------------------------------
// Mock hash backend

MockHashBackend::MockHashBackend(std::size_t dimension, int input_resolution, std::string model_id)
    : dimension_(dimension), input_resolution_(input_resolution), model_id_(std::move(model_id)) {
  if (dimension_ == 0) throw InvalidArgument("mock backend dimension must be positive");
  if (input_resolution_ < 0) throw InvalidArgument("input resolution must be >= 0");
}

Embedding MockHashBackend::from_hash(std::uint64_t hash) const {
  SplitMix64 rng(hash);
  std::vector<double> draws(dimension_);
  double sq = 0.0;
  for (auto& d : draws) {
    d = rng.normal();
    sq += d * d;
  }
  const double n = std::sqrt(sq);
  Embedding v(dimension_);
  for (std::size_t i = 0; i < dimension_; ++i) v[i] = static_cast<float>(draws[i] / n);
  return v;
}

Embedding MockHashBackend::embed_text(const std::string& text) {
  if (text.empty()) throw InvalidArgument("cannot embed empty text");
  if (text.size() > kMaxTextBytes) throw InvalidArgument("text exceeds mock backend limit");
  static constexpr std::uint8_t kTag[] = {'t', 'x', 't', 0};
  std::uint64_t h = fnv1a64(kTag);
  h = fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()), h);
  return from_hash(h);
}

Embedding MockHashBackend::embed_image(const Image& image) {
  const Image x = preprocess_for(*this, image);
  std::uint8_t header[13] = {'i', 'm', 'g', 0};
  auto put = [&](int offset, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) header[offset + i] = static_cast<std::uint8_t>(v >> (8 * i));
  };
  put(4, static_cast<std::uint32_t>(x.width()));
  put(8, static_cast<std::uint32_t>(x.height()));
  header[12] = static_cast<std::uint8_t>(x.channels());
  std::uint64_t h = fnv1a64(header);
  h = fnv1a64(x.pixels(), h);
  return from_hash(h);
}

// ---------------------------------------------------------------------------
// Fixture table backend

FixtureTableBackend::FixtureTableBackend(std::size_t dimension, std::string model_id)
    : dimension_(dimension), model_id_(std::move(model_id)) {
  if (dimension_ == 0) throw InvalidArgument("fixture dimension must be positive");
}

Embedding FixtureTableBackend::checked(Embedding v) const {
  if (v.size() != dimension_) {
    throw ValidationError("fixture vector has dimension " + std::to_string(v.size()) +
                          ", expected " + std::to_string(dimension_));
  }
  for (float x : v) {
    if (!std::isfinite(x)) throw ValidationError("fixture vector has non-finite entries");
  }
  if (std::abs(norm(v) - 1.0) > 1e-6) normalize(v);
  return v;
}

void FixtureTableBackend::add_text(const std::string& key, Embedding v) {
  text_[key] = checked(std::move(v));
}

void FixtureTableBackend::add_image(const std::string& sha256_hex, Embedding v) {
  image_[sha256_hex] = checked(std::move(v));
}

FixtureTableBackend FixtureTableBackend::parse(const std::string& json_text, std::string model_id) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("fixture file: ") + e.what());
  }
  try {
    FixtureTableBackend b(doc.at("dimension").get<std::size_t>(), std::move(model_id));
    if (doc.contains("text")) {
      for (auto& [k, v] : doc["text"].items()) b.add_text(k, v.get<Embedding>());
    }
    if (doc.contains("image_sha256")) {
      for (auto& [k, v] : doc["image_sha256"].items()) b.add_image(k, v.get<Embedding>());
    }
    return b;
  } catch (const json::exception& e) {
    throw ParseError(std::string("fixture file: ") + e.what());
  }
}

FixtureTableBackend FixtureTableBackend::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("cannot open fixture file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), "fixture:" + path.filename().string());
}

Embedding FixtureTableBackend::embed_text(const std::string& text) {
  if (text.empty()) throw InvalidArgument("cannot embed empty text");
  auto it = text_.find(text);
  if (it == text_.end()) throw BackendError("no fixture vector for text \"" + text + "\"");
  return it->second;
}

Embedding FixtureTableBackend::embed_image(const Image& image) {
  if (image.empty()) throw InvalidArgument("cannot embed a zero-area image");
  const std::string key = image_sha256(image);
  auto it = image_.find(key);
  if (it == image_.end()) throw BackendError("no fixture vector for image " + key);
  return it->second;
}

// ---------------------------------------------------------------------------
// Remote service backend

namespace {

std::string base64(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                          static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

}  // namespace

RemoteServiceBackend::RemoteServiceBackend(Options options)
    : options_(std::move(options)), dimension_(options_.dimension) {
  if (options_.url.empty()) throw InvalidArgument("remote backend requires a URL");
  if (options_.max_batch == 0) options_.max_batch = 1;
}

std::size_t RemoteServiceBackend::dimension() const {
  if (dimension_.load() == 0) {
    // Learn it from the service.
    auto* self = const_cast<RemoteServiceBackend*>(this);
    self->embed_text("dimension probe");
  }
  return dimension_.load();
}

std::vector<Embedding> RemoteServiceBackend::post(const std::string& path, const std::string& body,
                                                  std::size_t expect) {
  httplib::Client cli(options_.url);
  cli.set_connection_timeout(options_.timeout_seconds, 0);
  cli.set_read_timeout(options_.timeout_seconds, 0);
  cli.set_write_timeout(options_.timeout_seconds, 0);
  auto res = cli.Post(path, body, "application/json");
  if (!res) {
    throw BackendError("embedding service " + options_.url + path +
                       " unreachable: " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw BackendError("embedding service " + path + " returned HTTP " +
                       std::to_string(res->status) + ": " + res->body.substr(0, 200));
  }
  std::vector<Embedding> vectors;
  try {
    vectors = json::parse(res->body).at("vectors").get<std::vector<Embedding>>();
  } catch (const json::exception& e) {
    throw BackendError(std::string("malformed embedding service response: ") + e.what());
  }
  if (vectors.size() != expect) {
    throw BackendError("embedding service returned " + std::to_string(vectors.size()) +
                       " vectors, expected " + std::to_string(expect));
  }
  for (auto& v : vectors) {
    std::size_t expected_dim = dimension_.load();
    if (expected_dim == 0) {
      dimension_.compare_exchange_strong(expected_dim, v.size());
      expected_dim = dimension_.load();
    }
    if (v.size() != expected_dim) throw BackendError("embedding service dimension mismatch");
    normalize(v);
  }
  return vectors;
}

Embedding RemoteServiceBackend::embed_text(const std::string& text) {
  return embed_text_batch({text}).front();
}

Embedding RemoteServiceBackend::embed_image(const Image& image) {
  return embed_image_batch({image}).front();
}

std::vector<Embedding> RemoteServiceBackend::embed_text_batch(const std::vector<std::string>& texts) {
  std::vector<Embedding> out;
  out.reserve(texts.size());
  for (std::size_t start = 0; start < texts.size(); start += options_.max_batch) {
    const std::size_t end = std::min(texts.size(), start + options_.max_batch);
    json body = {{"texts", json::array()}};
    for (std::size_t i = start; i < end; ++i) {
      if (texts[i].empty()) {
        throw InvalidArgument("text batch item " + std::to_string(i) + ": empty text");
      }
      body["texts"].push_back(texts[i]);
    }
    auto part = post("/embed/text", body.dump(), end - start);
    std::move(part.begin(), part.end(), std::back_inserter(out));
  }
  return out;
}

std::vector<Embedding> RemoteServiceBackend::embed_image_batch(const std::vector<Image>& images) {
  std::vector<Embedding> out;
  out.reserve(images.size());
  for (std::size_t start = 0; start < images.size(); start += options_.max_batch) {
    const std::size_t end = std::min(images.size(), start + options_.max_batch);
    json body = {{"images_b64", json::array()}};
    for (std::size_t i = start; i < end; ++i) {
      body["images_b64"].push_back(base64(encode_png(preprocess_for(*this, images[i]))));
    }
    auto part = post("/embed/image", body.dump(), end - start);
    std::move(part.begin(), part.end(), std::back_inserter(out));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Instrumentation

Embedding InstrumentedBackend::embed_text(const std::string& text) {
  ++text_calls_;
  return inner_->embed_text(text);
}

Embedding InstrumentedBackend::embed_image(const Image& image) {
  ++image_calls_;
  return inner_->embed_image(image);
}

std::vector<Embedding> InstrumentedBackend::embed_text_batch(const std::vector<std::string>& texts) {
  text_calls_ += texts.size();
  return inner_->embed_text_batch(texts);
}

std::vector<Embedding> InstrumentedBackend::embed_image_batch(const std::vector<Image>& images) {
  image_calls_ += images.size();
  return inner_->embed_image_batch(images);
}

// ---------------------------------------------------------------------------
// Factory

BackendSpec parse_backend_spec(const std::string& text) {
  BackendSpec spec;
  const auto colon = text.find(':');
  spec.kind = backend_kind_from_string(text.substr(0, colon));
  const std::string arg = colon == std::string::npos ? "" : text.substr(colon + 1);
  switch (spec.kind) {
    case BackendKind::kMockHash:
      if (!arg.empty()) {
        try {
          spec.dimension = std::stoul(arg);
        } catch (const std::exception&) {
          throw InvalidArgument("bad mock-hash dimension: " + arg);
        }
      }
      break;
    case BackendKind::kFixtureTable:
    case BackendKind::kRuntimeModel:
      if (arg.empty()) throw InvalidArgument(to_string(spec.kind) + " requires a file path");
      spec.model_path = arg;
      break;
    case BackendKind::kRemoteService:
      if (arg.empty()) throw InvalidArgument("remote-service requires a URL");
      spec.url = arg;
      break;
  }
  return spec;
}

std::shared_ptr<EncoderBackend> make_backend(const BackendSpec& spec) {
  switch (spec.kind) {
    case BackendKind::kMockHash:
      return std::make_shared<MockHashBackend>(
          spec.dimension == 0 ? 512 : spec.dimension, std::max(spec.input_resolution, 0),
          spec.model_id.empty() ? "mock-hash" : spec.model_id);
    case BackendKind::kFixtureTable:
      return std::make_shared<FixtureTableBackend>(FixtureTableBackend::load(spec.model_path));
    case BackendKind::kRemoteService: {
      RemoteServiceBackend::Options o;
      o.url = spec.url;
      if (!spec.model_id.empty()) o.model_id = spec.model_id;
      if (spec.input_resolution >= 0) o.input_resolution = spec.input_resolution;
      o.dimension = spec.dimension;
      return std::make_shared<RemoteServiceBackend>(std::move(o));
    }
    case BackendKind::kRuntimeModel:
      throw BackendError(
          "runtime-model backend not compiled in (no inference runtime available); "
          "serve the model with tools/clip_server.py and use remote-service:<url>");
  }
  throw BackendError("unknown backend kind");
}

}  // namespace convis::encoder
