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

#include "convis/saliency.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <map>

#include "convis/detail/parallel.hpp"
#include "convis/embedding_table.hpp"
#include "convis/error.hpp"

namespace convis::saliency {

std::string to_string(WindowMode m) {
  return m == WindowMode::kContainment ? "containment" : "symmetric";
}

std::string to_string(BoundaryPolicy p) {
  return p == BoundaryPolicy::kFitOnly ? "fit-only" : "clamp";
}

WindowMode window_mode_from_string(const std::string& s) {
  if (s == "containment") return WindowMode::kContainment;
  if (s == "symmetric") return WindowMode::kSymmetric;
  throw InvalidArgument("unknown window mode: " + s);
}

BoundaryPolicy boundary_policy_from_string(const std::string& s) {
  if (s == "fit-only" || s == "fit") return BoundaryPolicy::kFitOnly;
  if (s == "clamp") return BoundaryPolicy::kClamp;
  throw InvalidArgument("unknown boundary policy: " + s);
}

void SaliencyConfig::validate() const {
  if (delta_small <= 0 || delta_small > delta_large) {
    throw InvalidArgument("patch sizes must satisfy 0 < delta_small <= delta_large (got " +
                          std::to_string(delta_small) + ", " + std::to_string(delta_large) + ")");
  }
  if (stride < 1) throw InvalidArgument("stride must be >= 1");
}

namespace {

// Square crop of side `size` anchored at (x, y), shifted inward and truncated
// to the image.
Rect clamped_square(int x, int y, int size, int width, int height) {
  const int w = std::min(size, width);
  const int h = std::min(size, height);
  return Rect{std::clamp(x, 0, width - w), std::clamp(y, 0, height - h), w, h};
}

PatchLocation make_location(int x, int y, int width, int height, const SaliencyConfig& cfg) {
  PatchLocation loc;
  loc.x = x;
  loc.y = y;
  if (cfg.boundary_policy == BoundaryPolicy::kFitOnly) {
    loc.small = Rect{x, y, cfg.delta_small, cfg.delta_small};
    loc.large = Rect{x, y, cfg.delta_large, cfg.delta_large};
  } else {
    loc.small = clamped_square(x, y, cfg.delta_small, width, height);
    loc.large = clamped_square(x, y, cfg.delta_large, width, height);
  }
  return loc;
}

}  // namespace

std::vector<PatchLocation> patch_grid(int width, int height, const SaliencyConfig& cfg) {
  cfg.validate();
  if (width < 1 || height < 1) throw InvalidArgument("image must have positive area");
  const bool fit = cfg.boundary_policy == BoundaryPolicy::kFitOnly;
  if (fit && (width < cfg.delta_large || height < cfg.delta_large)) {
    throw InvalidArgument("image " + std::to_string(width) + "x" + std::to_string(height) +
                          " is smaller than the large patch (" + std::to_string(cfg.delta_large) +
                          ") under the fit-only boundary policy");
  }
  const int x_end = fit ? width - cfg.delta_large : width - 1;
  const int y_end = fit ? height - cfg.delta_large : height - 1;
  std::vector<PatchLocation> out;
  for (int y = 0; y <= y_end; y += cfg.stride) {
    for (int x = 0; x <= x_end; x += cfg.stride) {
      out.push_back(make_location(x, y, width, height, cfg));
    }
  }
  return out;
}

encoder::Embedding local_embedding(const Image& image, int x, int y, const SaliencyConfig& cfg,
                                   encoder::EncoderBackend& backend) {
  const auto grid = patch_grid(image.width(), image.height(), cfg);
  auto it = std::find_if(grid.begin(), grid.end(),
                         [&](const PatchLocation& l) { return l.x == x && l.y == y; });
  if (it == grid.end()) {
    throw InvalidArgument("(" + std::to_string(x) + ", " + std::to_string(y) +
                          ") is not a grid location");
  }
  const auto a = backend.embed_image(image.crop(it->small));
  const auto b = backend.embed_image(image.crop(it->large));
  if (a.size() != b.size()) throw BackendError("patch embeddings differ in dimension");
  encoder::Embedding e(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) e[k] = (a[k] + b[k]) * 0.5f;
  return e;
}

PatchEmbeddings embed_patches(const Image& image, const SaliencyConfig& cfg,
                              encoder::EncoderBackend& backend, unsigned workers,
                              std::size_t batch_size) {
  PatchEmbeddings out;
  out.width = image.width();
  out.height = image.height();
  out.config = cfg;
  out.locations = patch_grid(image.width(), image.height(), cfg);
  out.dimension = backend.dimension();
  out.values.assign(out.locations.size() * out.dimension, 0.0f);
  if (batch_size == 0) batch_size = 1;
  const std::size_t n = out.locations.size();
  const std::size_t batches = (n + batch_size - 1) / batch_size;
  detail::parallel_for(batches, workers, [&](std::size_t b) {
    const std::size_t start = b * batch_size;
    const std::size_t end = std::min(n, start + batch_size);
    std::vector<Image> crops;
    crops.reserve(2 * (end - start));
    for (std::size_t i = start; i < end; ++i) crops.push_back(image.crop(out.locations[i].small));
    for (std::size_t i = start; i < end; ++i) crops.push_back(image.crop(out.locations[i].large));
    const auto emb = backend.embed_image_batch(crops);
    const std::size_t m = end - start;
    for (std::size_t i = 0; i < m; ++i) {
      const auto& a = emb[i];
      const auto& l = emb[m + i];
      if (a.size() != out.dimension || l.size() != out.dimension) {
        throw BackendError("patch embedding has unexpected dimension");
      }
      float* dst = &out.values[(start + i) * out.dimension];
      for (std::size_t k = 0; k < out.dimension; ++k) dst[k] = (a[k] + l[k]) * 0.5f;
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// PatchCache

std::string PatchCache::key(const std::string& image_sha, const SaliencyConfig& cfg,
                            const std::string& model_id) {
  return sha256_hex(image_sha + "|" + std::to_string(cfg.delta_small) + "|" +
                    std::to_string(cfg.delta_large) + "|" + std::to_string(cfg.stride) + "|" +
                    to_string(cfg.boundary_policy) + "|" + model_id);
}

std::optional<std::filesystem::path> PatchCache::file_for(const std::string& key) const {
  if (!options_.dir) return std::nullopt;
  return *options_.dir / ("patches-" + key.substr(0, 24) + ".cvdm");
}

std::shared_ptr<const PatchEmbeddings> PatchCache::load_file(const std::string& key, int width,
                                                             int height, const SaliencyConfig& cfg,
                                                             const std::string& model_id) const {
  auto path = file_for(key);
  if (!path || !std::filesystem::exists(*path)) return nullptr;
  try {
    EmbeddingTable t = read_table(*path);
    if (t.digest_hex != key || t.model_id != model_id) return nullptr;
    auto p = std::make_shared<PatchEmbeddings>();
    p->width = width;
    p->height = height;
    p->config = cfg;
    p->locations = patch_grid(width, height, cfg);
    if (p->locations.size() != t.rows()) return nullptr;
    for (std::size_t i = 0; i < t.rows(); ++i) {
      if (t.ids[i] != std::to_string(p->locations[i].x) + "," + std::to_string(p->locations[i].y)) {
        return nullptr;
      }
    }
    p->dimension = t.dimension;
    p->values = std::move(t.values);
    return p;
  } catch (const Error&) {
    return nullptr;
  }
}

void PatchCache::remember(const std::string& key, Entry entry) {
  entries_[key] = std::move(entry);
  order_.remove(key);
  order_.push_back(key);
  while (entries_.size() > std::max<std::size_t>(options_.capacity, 1)) {
    entries_.erase(order_.front());
    order_.pop_front();
  }
}

std::shared_ptr<const PatchEmbeddings> PatchCache::find(const std::string& image_sha, int width,
                                                        int height, const SaliencyConfig& cfg,
                                                        const std::string& model_id) {
  const std::string k = key(image_sha, cfg, model_id);
  {
    std::lock_guard lock(mu_);
    auto it = entries_.find(k);
    if (it != entries_.end()) {
      auto fut = it->second;
      if (fut.wait_for(std::chrono::seconds(0)) == std::future_status::ready) {
        try {
          return fut.get();
        } catch (...) {
          return nullptr;
        }
      }
    }
  }
  auto loaded = load_file(k, width, height, cfg, model_id);
  if (loaded) {
    std::promise<std::shared_ptr<const PatchEmbeddings>> p;
    p.set_value(loaded);
    std::lock_guard lock(mu_);
    remember(k, p.get_future().share());
  }
  return loaded;
}

std::shared_ptr<const PatchEmbeddings> PatchCache::get_or_compute(const Image& image,
                                                                  const SaliencyConfig& cfg,
                                                                  encoder::EncoderBackend& backend,
                                                                  bool* cache_hit) {
  const std::string model_id = backend.model_id();
  const std::string k = key(image_sha256(image), cfg, model_id);
  std::promise<std::shared_ptr<const PatchEmbeddings>> promise;
  {
    std::unique_lock lock(mu_);
    auto it = entries_.find(k);
    if (it != entries_.end()) {
      auto fut = it->second;
      ++hits_;
      lock.unlock();
      if (cache_hit) *cache_hit = true;
      return fut.get();
    }
    remember(k, promise.get_future().share());
  }
  // This thread owns the computation for k; other callers wait on the future.
  try {
    auto loaded = load_file(k, image.width(), image.height(), cfg, model_id);
    {
      std::lock_guard lock(mu_);
      ++(loaded ? hits_ : misses_);
    }
    if (cache_hit) *cache_hit = loaded != nullptr;
    if (!loaded) {
      auto computed = std::make_shared<PatchEmbeddings>(
          embed_patches(image, cfg, backend, options_.workers));
      if (auto path = file_for(k)) {
        EmbeddingTable t;
        for (const auto& l : computed->locations) {
          t.ids.push_back(std::to_string(l.x) + "," + std::to_string(l.y));
        }
        t.dimension = computed->dimension;
        t.values = computed->values;
        t.model_id = model_id;
        t.digest_hex = k;
        write_table_atomic(t, *path);
      }
      loaded = std::move(computed);
    }
    promise.set_value(loaded);
    return loaded;
  } catch (...) {
    promise.set_exception(std::current_exception());
    std::lock_guard lock(mu_);
    entries_.erase(k);
    order_.remove(k);
    throw;
  }
}

std::size_t PatchCache::hits() const {
  std::lock_guard lock(mu_);
  return hits_;
}

std::size_t PatchCache::misses() const {
  std::lock_guard lock(mu_);
  return misses_;
}

// ---------------------------------------------------------------------------
// Scoring and aggregation

ScoreGrid score_grid(const PatchEmbeddings& patches, std::string_view synset,
                     const lexdb::Hierarchy& hier, const simcore::DefinitionMatrix& defmat) {
  const auto rows = simcore::descendant_rows(hier, synset, defmat);
  ScoreGrid grid;
  grid.width = patches.width;
  grid.height = patches.height;
  grid.config = patches.config;
  grid.locations = patches.locations;
  grid.scores.reserve(patches.locations.size());
  for (std::size_t i = 0; i < patches.locations.size(); ++i) {
    const auto z = simcore::z_all(patches.row(i), defmat);
    grid.scores.push_back(simcore::max_rank_from_z(z, rows));
  }
  return grid;
}

ScoreGrid score_grid(const Image& image, std::string_view synset, const SaliencyConfig& cfg,
                     encoder::EncoderBackend& backend, const simcore::DefinitionMatrix& defmat,
                     const lexdb::Hierarchy& hier, PatchCache* cache) {
  // Fail on an unknown synset before spending encoder calls.
  hier.index_of(synset);
  if (cache) return score_grid(*cache->get_or_compute(image, cfg, backend), synset, hier, defmat);
  return score_grid(embed_patches(image, cfg, backend), synset, hier, defmat);
}

SaliencyMap aggregate(const ScoreGrid& grid) {
  if (grid.locations.empty() || grid.locations.size() != grid.scores.size()) {
    throw InvalidArgument("aggregate requires a non-empty score grid");
  }
  const int W = grid.width;
  const int H = grid.height;
  const std::size_t total = grid.scores.front().total();
  const int dl = grid.config.delta_large;
  // 2D difference arrays, (W+1) x (H+1).
  std::vector<std::int64_t> sum(static_cast<std::size_t>(W + 1) * (H + 1), 0);
  std::vector<std::int64_t> cnt(sum.size(), 0);
  auto at = [W](int x, int y) { return static_cast<std::size_t>(y) * (W + 1) + x; };
  for (std::size_t k = 0; k < grid.locations.size(); ++k) {
    const auto& loc = grid.locations[k];
    int x0, y0, x1, y1;
    if (grid.config.window_mode == WindowMode::kContainment) {
      x0 = loc.large.x;
      y0 = loc.large.y;
      x1 = loc.large.x + loc.large.width;
      y1 = loc.large.y + loc.large.height;
    } else {
      x0 = loc.x - dl + 1;
      y0 = loc.y - dl + 1;
      x1 = loc.x + dl;
      y1 = loc.y + dl;
    }
    x0 = std::clamp(x0, 0, W);
    x1 = std::clamp(x1, 0, W);
    y0 = std::clamp(y0, 0, H);
    y1 = std::clamp(y1, 0, H);
    if (x0 >= x1 || y0 >= y1) continue;
    const auto v = static_cast<std::int64_t>(grid.scores[k].count());
    sum[at(x0, y0)] += v;
    sum[at(x1, y0)] -= v;
    sum[at(x0, y1)] -= v;
    sum[at(x1, y1)] += v;
    cnt[at(x0, y0)] += 1;
    cnt[at(x1, y0)] -= 1;
    cnt[at(x0, y1)] -= 1;
    cnt[at(x1, y1)] += 1;
  }
  for (int y = 0; y <= H; ++y) {
    for (int x = 0; x <= W; ++x) {
      if (x > 0) {
        sum[at(x, y)] += sum[at(x - 1, y)];
        cnt[at(x, y)] += cnt[at(x - 1, y)];
      }
      if (y > 0) {
        sum[at(x, y)] += sum[at(x, y - 1)];
        cnt[at(x, y)] += cnt[at(x, y - 1)];
      }
      if (x > 0 && y > 0) {
        sum[at(x, y)] -= sum[at(x - 1, y - 1)];
        cnt[at(x, y)] -= cnt[at(x - 1, y - 1)];
      }
    }
  }
  SaliencyMap map;
  map.width = W;
  map.height = H;
  map.values.assign(static_cast<std::size_t>(W) * H, 0.0);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const auto n = cnt[at(x, y)];
      if (n > 0) {
        map.values[static_cast<std::size_t>(y) * W + x] =
            static_cast<double>(sum[at(x, y)]) / (static_cast<double>(n) * static_cast<double>(total));
      }
    }
  }
  return map;
}

SaliencyMap compute_saliency(const Image& image, std::string_view synset, const SaliencyConfig& cfg,
                             encoder::EncoderBackend& backend,
                             const simcore::DefinitionMatrix& defmat,
                             const lexdb::Hierarchy& hier, PatchCache* cache) {
  auto map = aggregate(score_grid(image, synset, cfg, backend, defmat, hier, cache));
  map.synset = std::string(synset);
  map.image_id = image_sha256(image);
  return map;
}

LocationRanks::LocationRanks(const PatchEmbeddings& patches,
                             const simcore::DefinitionMatrix& defmat, unsigned workers)
    : width_(patches.width),
      height_(patches.height),
      config_(patches.config),
      locations_(patches.locations),
      synsets_(defmat.size()),
      counts_(patches.locations.size() * defmat.size()) {
  detail::parallel_for(locations_.size(), workers, [&](std::size_t i) {
    const auto z = simcore::z_all(patches.row(i), defmat);
    const auto c = simcore::rank_counts(z);
    std::copy(c.begin(), c.end(), counts_.begin() + static_cast<std::ptrdiff_t>(i * synsets_));
  });
}

ScoreGrid LocationRanks::score_grid(std::string_view synset, const lexdb::Hierarchy& hier,
                                    const simcore::DefinitionMatrix& defmat) const {
  const auto rows = simcore::descendant_rows(hier, synset, defmat);
  ScoreGrid grid;
  grid.width = width_;
  grid.height = height_;
  grid.config = config_;
  grid.locations = locations_;
  grid.scores.reserve(locations_.size());
  for (std::size_t i = 0; i < locations_.size(); ++i) {
    const std::uint32_t* c = &counts_[i * synsets_];
    std::uint32_t best = 0;
    for (auto r : rows) best = std::max(best, c[r]);
    grid.scores.emplace_back(best, synsets_);
  }
  return grid;
}

// ---------------------------------------------------------------------------
// Rendering

namespace {

struct Stop {
  double t;
  std::uint8_t r, g, b;
};

const std::map<std::string, std::vector<Stop>>& palettes() {
  static const std::map<std::string, std::vector<Stop>> kPalettes = {
      {"viridis",
       {{0.0, 68, 1, 84},
        {0.125, 71, 44, 122},
        {0.25, 59, 81, 139},
        {0.375, 44, 113, 142},
        {0.5, 33, 144, 141},
        {0.625, 39, 173, 129},
        {0.75, 92, 200, 99},
        {0.875, 170, 220, 50},
        {1.0, 253, 231, 37}}},
      {"jet",
       {{0.0, 0, 0, 128},
        {0.125, 0, 0, 255},
        {0.375, 0, 255, 255},
        {0.625, 255, 255, 0},
        {0.875, 255, 0, 0},
        {1.0, 128, 0, 0}}},
      {"hot", {{0.0, 0, 0, 0}, {0.375, 255, 0, 0}, {0.75, 255, 255, 0}, {1.0, 255, 255, 255}}},
      {"gray", {{0.0, 0, 0, 0}, {1.0, 255, 255, 255}}},
  };
  return kPalettes;
}

std::uint8_t round_u8(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
}

void check_dims(const Image& image, const SaliencyMap& map) {
  if (image.width() != map.width || image.height() != map.height) {
    throw InvalidArgument("saliency map is " + std::to_string(map.width) + "x" +
                          std::to_string(map.height) + " but image is " +
                          std::to_string(image.width()) + "x" + std::to_string(image.height()));
  }
}

}  // namespace

std::vector<std::string> colormap_names() {
  std::vector<std::string> out;
  for (const auto& [name, _] : palettes()) out.push_back(name);
  return out;
}

std::array<std::uint8_t, 3> colormap(const std::string& name, double v) {
  auto it = palettes().find(name);
  if (it == palettes().end()) throw InvalidArgument("unknown colormap: " + name);
  const auto& stops = it->second;
  v = std::clamp(v, 0.0, 1.0);
  std::size_t k = 1;
  while (k + 1 < stops.size() && stops[k].t < v) ++k;
  const Stop& a = stops[k - 1];
  const Stop& b = stops[k];
  const double f = (v - a.t) / (b.t - a.t);
  return {round_u8(a.r + f * (b.r - a.r)), round_u8(a.g + f * (b.g - a.g)),
          round_u8(a.b + f * (b.b - a.b))};
}

Image render_overlay(const Image& image, const SaliencyMap& map, const std::string& palette) {
  check_dims(image, map);
  const Image rgb = to_rgb(image);
  Image out(rgb.width(), rgb.height(), 3);
  for (int y = 0; y < rgb.height(); ++y) {
    for (int x = 0; x < rgb.width(); ++x) {
      const auto c = colormap(palette, map.at(x, y));
      for (int ch = 0; ch < 3; ++ch) out.at(x, y, ch) = round_u8(0.5 * c[ch] + 0.5 * rgb.at(x, y, ch));
    }
  }
  return out;
}

Image render_mask(const Image& image, const SaliencyMap& map) {
  check_dims(image, map);
  Image out(image.width(), image.height(), image.channels());
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      const double w = std::clamp(map.at(x, y), 0.0, 1.0);
      for (int ch = 0; ch < image.channels(); ++ch) {
        out.at(x, y, ch) = round_u8(w * image.at(x, y, ch) + (1.0 - w) * 255.0);
      }
    }
  }
  return out;
}

Image to_gray_image(const SaliencyMap& map) {
  Image out(map.width, map.height, 1);
  auto px = out.pixels();
  for (std::size_t i = 0; i < map.values.size(); ++i) px[i] = round_u8(255.0 * map.values[i]);
  return out;
}

// ---------------------------------------------------------------------------
// CVIS float export

std::vector<std::uint8_t> encode_cvis(const SaliencyMap& map) {
  static_assert(std::endian::native == std::endian::little, "big-endian hosts unsupported");
  std::vector<std::uint8_t> out{'C', 'V', 'I', 'S'};
  out.reserve(14 + 4 * map.values.size());
  auto put = [&](std::uint32_t v, int n) {
    for (int i = 0; i < n; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  put(1, 2);
  put(static_cast<std::uint32_t>(map.width), 4);
  put(static_cast<std::uint32_t>(map.height), 4);
  for (double v : map.values) {
    put(std::bit_cast<std::uint32_t>(static_cast<float>(v)), 4);
  }
  return out;
}

SaliencyMap decode_cvis(std::span<const std::uint8_t> b) {
  if (b.size() < 14 || std::memcmp(b.data(), "CVIS", 4) != 0) throw ParseError("not a CVIS file");
  auto get = [&](std::size_t off, int n) {
    std::uint32_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint32_t>(b[off + i]) << (8 * i);
    return v;
  };
  if (get(4, 2) != 1) throw ParseError("unsupported CVIS version");
  SaliencyMap map;
  map.width = static_cast<int>(get(6, 4));
  map.height = static_cast<int>(get(10, 4));
  const std::size_t n = static_cast<std::size_t>(map.width) * map.height;
  if (b.size() != 14 + 4 * n) throw ParseError("CVIS payload size mismatch");
  map.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    map.values[i] = std::bit_cast<float>(get(14 + 4 * i, 4));
  }
  return map;
}

void write_cvis(const SaliencyMap& map, const std::filesystem::path& path) {
  write_file_bytes(path, encode_cvis(map));
}

SaliencyMap read_cvis(const std::filesystem::path& path) { return decode_cvis(read_file_bytes(path)); }

}  // namespace convis::saliency
