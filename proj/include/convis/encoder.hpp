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
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "convis/image.hpp"

namespace convis::encoder {

// D-dimensional embedding. Backends return unit-norm vectors.
using Embedding = std::vector<float>;

enum class BackendKind { kRuntimeModel, kRemoteService, kMockHash, kFixtureTable };

std::string to_string(BackendKind kind);
BackendKind backend_kind_from_string(const std::string& name);

// Joint image/text embedding network. Implementations must be safe to call
// from several threads at once.
class EncoderBackend {
 public:
  virtual ~EncoderBackend() = default;

  virtual BackendKind kind() const = 0;
  virtual std::string model_id() const = 0;
  virtual std::size_t dimension() const = 0;
  // Side length images are resized to before encoding; 0 means images are
  // encoded at their native size.
  virtual int input_resolution() const = 0;

  virtual Embedding embed_text(const std::string& text) = 0;
  virtual Embedding embed_image(const Image& image) = 0;

  // Default implementations loop over the single-item calls. A failure is
  // rethrown as BackendError carrying the failing index.
  virtual std::vector<Embedding> embed_text_batch(const std::vector<std::string>& texts);
  virtual std::vector<Embedding> embed_image_batch(const std::vector<Image>& images);
};

// Bilinear resize to input_resolution() (square) when it is non-zero.
Image preprocess_for(const EncoderBackend& backend, const Image& image);

// In-place L2 normalisation; throws BackendError on a zero or non-finite vector.
void normalize(Embedding& v);

double dot(std::span<const float> a, std::span<const float> b);
double norm(std::span<const float> v);

// dot(a,b)/(|a||b|) clamped to [-1,1]. Throws InvalidArgument on dimension
// mismatch or a zero vector.
double cosine(std::span<const float> a, std::span<const float> b);

// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes,
                      std::uint64_t seed = 0xcbf29ce484222325ULL);

// SplitMix64: the stream seeded by the mock backend's hash.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next() noexcept;
  // Uniform in (0, 1).
  double uniform() noexcept;
  // Standard normal via Box-Muller (no cached second draw).
  double normal() noexcept;
  SplitMix64 split() noexcept { return SplitMix64(next()); }

 private:
  std::uint64_t state_;
};

// Hash of the raw input bytes seeds D normal draws, then L2 normalisation.
// Texts and images hash under different domain tags so "abc" as text and an
// image with the same bytes do not collide.
class MockHashBackend final : public EncoderBackend {
 public:
  explicit MockHashBackend(std::size_t dimension = 512, int input_resolution = 0,
                           std::string model_id = "mock-hash");

  BackendKind kind() const override { return BackendKind::kMockHash; }
  std::string model_id() const override { return model_id_ + "/d" + std::to_string(dimension_); }
  std::size_t dimension() const override { return dimension_; }
  int input_resolution() const override { return input_resolution_; }

  Embedding embed_text(const std::string& text) override;
  Embedding embed_image(const Image& image) override;

  static constexpr std::size_t kMaxTextBytes = 1 << 16;

 private:
  Embedding from_hash(std::uint64_t hash) const;

  std::size_t dimension_;
  int input_resolution_;
  std::string model_id_;
};

// Explicit key -> vector table. File format:
//   {"dimension": D, "text": {key: [f32]}, "image_sha256": {hex: [f32]}}
// Image keys are image_sha256() of the (preprocessed) image.
class FixtureTableBackend final : public EncoderBackend {
 public:
  FixtureTableBackend(std::size_t dimension, std::string model_id = "fixture-table");
  static FixtureTableBackend load(const std::filesystem::path& path);
  static FixtureTableBackend parse(const std::string& json_text,
                                   std::string model_id = "fixture-table");

  // Vectors whose norm is off by more than 1e-6 are normalised on insert.
  void add_text(const std::string& key, Embedding v);
  void add_image(const std::string& sha256_hex, Embedding v);
  void add_image(const Image& image, Embedding v) { add_image(image_sha256(image), std::move(v)); }

  BackendKind kind() const override { return BackendKind::kFixtureTable; }
  std::string model_id() const override { return model_id_; }
  std::size_t dimension() const override { return dimension_; }
  int input_resolution() const override { return 0; }

  Embedding embed_text(const std::string& text) override;
  Embedding embed_image(const Image& image) override;

 private:
  Embedding checked(Embedding v) const;

  std::size_t dimension_;
  std::string model_id_;
  std::unordered_map<std::string, Embedding> text_;
  std::unordered_map<std::string, Embedding> image_;
};

// HTTP JSON client:
//   POST /embed/text  {"texts": [str]}        -> {"vectors": [[f32]]}
//   POST /embed/image {"images_b64": [png]}   -> {"vectors": [[f32]]}
// The dimension is learned from the first response when not given.
class RemoteServiceBackend final : public EncoderBackend {
 public:
  struct Options {
    std::string url;  // e.g. "http://127.0.0.1:8090"
    std::string model_id = "remote";
    std::size_t dimension = 0;
    int input_resolution = 224;
    int timeout_seconds = 60;
    std::size_t max_batch = 64;
  };
  explicit RemoteServiceBackend(Options options);

  BackendKind kind() const override { return BackendKind::kRemoteService; }
  std::string model_id() const override { return options_.model_id; }
  std::size_t dimension() const override;
  int input_resolution() const override { return options_.input_resolution; }

  Embedding embed_text(const std::string& text) override;
  Embedding embed_image(const Image& image) override;
  std::vector<Embedding> embed_text_batch(const std::vector<std::string>& texts) override;
  std::vector<Embedding> embed_image_batch(const std::vector<Image>& images) override;

 private:
  std::vector<Embedding> post(const std::string& path, const std::string& body, std::size_t expect);

  Options options_;
  mutable std::atomic<std::size_t> dimension_;
};

// Counts calls into a wrapped backend. Image calls are counted per image, so
// a batch of n adds n.
class InstrumentedBackend final : public EncoderBackend {
 public:
  explicit InstrumentedBackend(std::shared_ptr<EncoderBackend> inner) : inner_(std::move(inner)) {}

  BackendKind kind() const override { return inner_->kind(); }
  std::string model_id() const override { return inner_->model_id(); }
  std::size_t dimension() const override { return inner_->dimension(); }
  int input_resolution() const override { return inner_->input_resolution(); }

  Embedding embed_text(const std::string& text) override;
  Embedding embed_image(const Image& image) override;
  std::vector<Embedding> embed_text_batch(const std::vector<std::string>& texts) override;
  std::vector<Embedding> embed_image_batch(const std::vector<Image>& images) override;

  std::size_t text_calls() const noexcept { return text_calls_.load(); }
  std::size_t image_calls() const noexcept { return image_calls_.load(); }
  void reset() noexcept {
    text_calls_ = 0;
    image_calls_ = 0;
  }

 private:
  std::shared_ptr<EncoderBackend> inner_;
  std::atomic<std::size_t> text_calls_{0};
  std::atomic<std::size_t> image_calls_{0};
};

struct BackendSpec {
  BackendKind kind = BackendKind::kMockHash;
  std::string model_path;  // fixture file or runtime model bundle
  std::string url;         // remote service
  std::string model_id;
  std::size_t dimension = 0;  // 0: backend default (mock 512, remote learned)
  int input_resolution = -1;  // -1: backend default
};

// "mock-hash[:D]", "fixture-table:<file>", "remote-service:<url>",
// "runtime-model:<bundle>". Short aliases "mock", "fixture", "remote" accepted.
BackendSpec parse_backend_spec(const std::string& text);

// Throws BackendError for runtime-model when built without an inference runtime.
std::shared_ptr<EncoderBackend> make_backend(const BackendSpec& spec);

}  // namespace convis::encoder
