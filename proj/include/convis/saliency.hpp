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

#include <array>
#include <cstdint>
#include <filesystem>
#include <future>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "convis/encoder.hpp"
#include "convis/image.hpp"
#include "convis/lexdb.hpp"
#include "convis/simcore.hpp"

namespace convis::saliency {

// Which scores contribute to a pixel. Containment: locations whose large
// patch covers the pixel. Symmetric: |l - i| < delta_large and
// |m - j| < delta_large measured from the location anchor.
enum class WindowMode { kContainment, kSymmetric };

// Fit-only keeps anchors whose large patch lies inside the image. Clamp keeps
// every anchor on the stride grid and shifts each crop inward at the borders.
enum class BoundaryPolicy { kFitOnly, kClamp };

std::string to_string(WindowMode m);
std::string to_string(BoundaryPolicy p);
WindowMode window_mode_from_string(const std::string& s);
BoundaryPolicy boundary_policy_from_string(const std::string& s);

struct SaliencyConfig {
  int delta_small = 64;
  int delta_large = 128;
  int stride = 16;
  WindowMode window_mode = WindowMode::kContainment;
  BoundaryPolicy boundary_policy = BoundaryPolicy::kFitOnly;

  // Throws InvalidArgument unless 0 < delta_small <= delta_large, stride >= 1.
  void validate() const;
  friend bool operator==(const SaliencyConfig&, const SaliencyConfig&) = default;
};

struct PatchLocation {
  int x = 0;  // anchor column
  int y = 0;  // anchor row
  Rect small;
  Rect large;
  friend bool operator==(const PatchLocation&, const PatchLocation&) = default;
};

// Anchors in row-major order (y outer, x inner). Throws InvalidArgument when
// the fit-only policy admits no location.
std::vector<PatchLocation> patch_grid(int width, int height, const SaliencyConfig& cfg);

// Mean of the small and large patch embeddings at anchor (x, y); not
// renormalised.
encoder::Embedding local_embedding(const Image& image, int x, int y, const SaliencyConfig& cfg,
                                   encoder::EncoderBackend& backend);

// Local embeddings for every grid location of one image.
struct PatchEmbeddings {
  int width = 0;
  int height = 0;
  SaliencyConfig config;
  std::vector<PatchLocation> locations;
  std::size_t dimension = 0;
  std::vector<float> values;  // locations.size() x dimension

  std::span<const float> row(std::size_t i) const {
    return std::span<const float>(values).subspan(i * dimension, dimension);
  }
};

// Encodes all 2 x |locations| patches, `workers` threads at a time.
PatchEmbeddings embed_patches(const Image& image, const SaliencyConfig& cfg,
                              encoder::EncoderBackend& backend, unsigned workers = 1,
                              std::size_t batch_size = 64);

// Content-addressed store of PatchEmbeddings keyed by (image SHA-256,
// delta_small, delta_large, stride, boundary policy, model id). Concurrent
// misses on one key are coalesced into a single computation. Optionally
// persisted under `dir` in the CVDM table layout.
class PatchCache {
 public:
  struct Options {
    std::optional<std::filesystem::path> dir;
    std::size_t capacity = 32;  // in-memory entries
    unsigned workers = 1;
  };
  PatchCache() : PatchCache(Options{}) {}
  explicit PatchCache(Options options) : options_(std::move(options)) {}

  static std::string key(const std::string& image_sha, const SaliencyConfig& cfg,
                         const std::string& model_id);

  std::shared_ptr<const PatchEmbeddings> get_or_compute(const Image& image,
                                                        const SaliencyConfig& cfg,
                                                        encoder::EncoderBackend& backend,
                                                        bool* cache_hit = nullptr);
  // Lookup only (memory, then disk). No encoder calls.
  std::shared_ptr<const PatchEmbeddings> find(const std::string& image_sha, int width, int height,
                                              const SaliencyConfig& cfg,
                                              const std::string& model_id);

  std::size_t hits() const;
  std::size_t misses() const;

 private:
  using Entry = std::shared_future<std::shared_ptr<const PatchEmbeddings>>;
  std::optional<std::filesystem::path> file_for(const std::string& key) const;
  std::shared_ptr<const PatchEmbeddings> load_file(const std::string& key, int width, int height,
                                                   const SaliencyConfig& cfg,
                                                   const std::string& model_id) const;
  void remember(const std::string& key, Entry entry);

  Options options_;
  mutable std::mutex mu_;
  std::unordered_map<std::string, Entry> entries_;
  std::list<std::string> order_;
  std::size_t hits_ = 0;
  std::size_t misses_ = 0;
};

// Local similarity scores r at every grid location.
struct ScoreGrid {
  int width = 0;
  int height = 0;
  SaliencyConfig config;
  std::vector<PatchLocation> locations;
  std::vector<simcore::RankScore> scores;
};

ScoreGrid score_grid(const PatchEmbeddings& patches, std::string_view synset,
                     const lexdb::Hierarchy& hier, const simcore::DefinitionMatrix& defmat);

// Embeds patches (through `cache` when given) and scores them.
ScoreGrid score_grid(const Image& image, std::string_view synset, const SaliencyConfig& cfg,
                     encoder::EncoderBackend& backend, const simcore::DefinitionMatrix& defmat,
                     const lexdb::Hierarchy& hier, PatchCache* cache = nullptr);

struct SaliencyMap {
  int width = 0;
  int height = 0;
  std::vector<double> values;  // row-major, each in [0, 1]
  std::string synset;
  std::string image_id;

  double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

// Per-pixel mean of the scores in the pixel's window set; 0 where the set is
// empty. Integer rank counts are accumulated exactly, so the result does not
// depend on summation order.
SaliencyMap aggregate(const ScoreGrid& grid);

SaliencyMap compute_saliency(const Image& image, std::string_view synset, const SaliencyConfig& cfg,
                             encoder::EncoderBackend& backend,
                             const simcore::DefinitionMatrix& defmat,
                             const lexdb::Hierarchy& hier, PatchCache* cache = nullptr);

// Rank counts of every synset at every location: scoring any concept from it
// is a max over the concept's descendant rows.
class LocationRanks {
 public:
  LocationRanks(const PatchEmbeddings& patches, const simcore::DefinitionMatrix& defmat,
                unsigned workers = 1);

  ScoreGrid score_grid(std::string_view synset, const lexdb::Hierarchy& hier,
                       const simcore::DefinitionMatrix& defmat) const;
  std::size_t locations() const noexcept { return locations_.size(); }

 private:
  int width_ = 0;
  int height_ = 0;
  SaliencyConfig config_;
  std::vector<PatchLocation> locations_;
  std::size_t synsets_ = 0;
  std::vector<std::uint32_t> counts_;  // locations x synsets
};

// Named palettes: "viridis", "jet", "hot", "gray".
std::vector<std::string> colormap_names();
std::array<std::uint8_t, 3> colormap(const std::string& name, double v);

// 0.5 alpha blend of palette(map) over the image. RGB output.
Image render_overlay(const Image& image, const SaliencyMap& map, const std::string& palette = "viridis");
// y * image + (1 - y) * white, rounded half up.
Image render_mask(const Image& image, const SaliencyMap& map);
// Grayscale, pixel = round(255 * y).
Image to_gray_image(const SaliencyMap& map);

// "CVIS" u16 version u32 W u32 H, then W*H little-endian f32, row-major.
std::vector<std::uint8_t> encode_cvis(const SaliencyMap& map);
SaliencyMap decode_cvis(std::span<const std::uint8_t> bytes);
void write_cvis(const SaliencyMap& map, const std::filesystem::path& path);
SaliencyMap read_cvis(const std::filesystem::path& path);

}  // namespace convis::saliency
