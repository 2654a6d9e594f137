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

#include "convis/simcore.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "convis/error.hpp"
#include "convis/image.hpp"

namespace convis::simcore {

DefinitionMatrix::DefinitionMatrix(EmbeddingTable table) : table_(std::move(table)) {
  if (table_.values.size() != table_.rows() * table_.dimension) {
    throw ValidationError("definition matrix shape mismatch");
  }
  if (table_.dimension == 0 && table_.rows() > 0) throw ValidationError("zero dimension");
  for (std::size_t i = 0; i < table_.rows(); ++i) {
    if (i > 0 && !(table_.ids[i - 1] < table_.ids[i])) {
      throw ValidationError("definition matrix ids must be unique and sorted");
    }
    auto r = table_.row(i);
    for (float v : r) {
      if (!std::isfinite(v)) throw ValidationError("non-finite value in row " + table_.ids[i]);
    }
    const double n = encoder::norm(r);
    if (std::abs(n - 1.0) > 1e-6) {
      throw ValidationError("row " + table_.ids[i] + " is not unit norm");
    }
    row_norms_.push_back(n);
    index_.emplace(table_.ids[i], i);
  }
}

std::size_t DefinitionMatrix::index_of(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) throw NotFound("unknown synset " + std::string(id));
  return it->second;
}

std::filesystem::path definition_cache_path(const std::filesystem::path& cache_dir,
                                            const std::string& model_id,
                                            const std::string& hierarchy_hash) {
  const std::string key = sha256_hex(model_id + '\0' + hierarchy_hash);
  return cache_dir / ("defmat-" + key.substr(0, 24) + ".cvdm");
}

DefinitionMatrix build_definition_matrix(const lexdb::Hierarchy& hier,
                                         encoder::EncoderBackend& backend,
                                         const std::optional<std::filesystem::path>& cache_dir,
                                         BuildStats* stats, std::size_t batch_size) {
  if (hier.size() == 0) throw InvalidArgument("cannot build a definition matrix for an empty hierarchy");
  BuildStats local;
  BuildStats& st = stats ? *stats : local;
  st = BuildStats{};
  const std::string model_id = backend.model_id();

  if (cache_dir) {
    st.cache_file = definition_cache_path(*cache_dir, model_id, hier.content_hash());
    if (std::filesystem::exists(st.cache_file)) {
      try {
        EmbeddingTable t = read_table(st.cache_file);
        if (t.model_id == model_id && t.digest_hex == hier.content_hash() &&
            t.rows() == hier.size()) {
          DefinitionMatrix m(std::move(t));
          st.cache_hit = true;
          return m;
        }
      } catch (const Error&) {
        // Corrupt or stale cache file: rebuild and overwrite.
      }
    }
  }

  EmbeddingTable t;
  t.model_id = model_id;
  t.digest_hex = hier.content_hash();
  t.dimension = backend.dimension();
  t.ids.reserve(hier.size());
  t.values.reserve(hier.size() * t.dimension);
  if (batch_size == 0) batch_size = 1;
  for (std::size_t start = 0; start < hier.size(); start += batch_size) {
    const std::size_t end = std::min(hier.size(), start + batch_size);
    std::vector<std::string> texts;
    for (std::size_t i = start; i < end; ++i) texts.push_back(hier.node(i).definition);
    auto vectors = backend.embed_text_batch(texts);
    st.text_calls += texts.size();
    for (std::size_t k = 0; k < vectors.size(); ++k) {
      if (vectors[k].size() != t.dimension) {
        throw BackendError("backend returned wrong dimension for " + hier.node(start + k).id);
      }
      t.ids.push_back(hier.node(start + k).id);
      t.values.insert(t.values.end(), vectors[k].begin(), vectors[k].end());
    }
  }
  DefinitionMatrix m(std::move(t));
  if (cache_dir) write_table_atomic(m.table(), st.cache_file);
  return m;
}

double z_score(std::span<const float> x, std::string_view s, const DefinitionMatrix& defmat) {
  return encoder::cosine(x, defmat.row(defmat.index_of(s)));
}

std::vector<double> z_all(std::span<const float> x, const DefinitionMatrix& defmat) {
  if (x.size() != defmat.dimension()) throw InvalidArgument("z_all: dimension mismatch");
  const double nx = encoder::norm(x);
  if (nx == 0.0) throw InvalidArgument("z_all: zero vector");
  std::vector<double> z(defmat.size());
  for (std::size_t i = 0; i < defmat.size(); ++i) {
    auto r = defmat.row(i);
    // Same expression as encoder::cosine so z_all and z_score agree bitwise.
    z[i] = std::clamp(encoder::dot(x, r) / (nx * defmat.row_norm(i)), -1.0, 1.0);
  }
  return z;
}

RankScore rank_sim(std::span<const float> x, std::string_view s, const DefinitionMatrix& defmat) {
  const std::size_t target = defmat.index_of(s);
  const auto z = z_all(x, defmat);
  const std::size_t g = static_cast<std::size_t>(
      std::count_if(z.begin(), z.end(), [&](double v) { return v < z[target]; }));
  return RankScore(g, z.size());
}

std::vector<std::size_t> rank_counts(std::span<const double> z) {
  std::vector<std::size_t> order(z.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return z[a] < z[b]; });
  std::vector<std::size_t> counts(z.size());
  std::size_t group_start = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (k > 0 && z[order[k - 1]] < z[order[k]]) group_start = k;
    counts[order[k]] = group_start;
  }
  return counts;
}

std::vector<RankScore> rank_all(std::span<const float> x, const DefinitionMatrix& defmat) {
  const auto z = z_all(x, defmat);
  const auto counts = rank_counts(z);
  std::vector<RankScore> out;
  out.reserve(counts.size());
  for (auto c : counts) out.emplace_back(c, counts.size());
  return out;
}

std::vector<std::size_t> descendant_rows(const lexdb::Hierarchy& hier, std::string_view s,
                                         const DefinitionMatrix& defmat) {
  const auto nodes = hier.descendant_indices(hier.index_of(s));
  std::vector<std::size_t> rows;
  rows.reserve(nodes.size());
  const bool aligned = defmat.hierarchy_hash() == hier.content_hash();
  for (auto n : nodes) rows.push_back(aligned ? n : defmat.index_of(hier.node(n).id));
  std::sort(rows.begin(), rows.end());
  return rows;
}

RankScore max_rank_from_z(std::span<const double> z, std::span<const std::size_t> rows) {
  if (rows.empty()) throw InvalidArgument("empty descendant set");
  double best = z[rows.front()];
  for (auto r : rows) best = std::max(best, z[r]);
  const std::size_t g = static_cast<std::size_t>(
      std::count_if(z.begin(), z.end(), [&](double v) { return v < best; }));
  return RankScore(g, z.size());
}

RankScore max_rank_sim(std::span<const float> x, std::string_view s, const lexdb::Hierarchy& hier,
                       const DefinitionMatrix& defmat) {
  const auto rows = descendant_rows(hier, s, defmat);
  const auto z = z_all(x, defmat);
  return max_rank_from_z(z, rows);
}

std::vector<std::pair<std::string, RankScore>> top_concepts(std::span<const float> x,
                                                            const DefinitionMatrix& defmat,
                                                            std::size_t k) {
  if (k == 0) throw InvalidArgument("top_concepts: k must be >= 1");
  const auto ranks = rank_all(x, defmat);
  std::vector<std::size_t> order(ranks.size());
  std::iota(order.begin(), order.end(), 0);
  // Row order is id order, so a stable sort on rank gives the id tie-break.
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return ranks[a] > ranks[b]; });
  order.resize(std::min(k, order.size()));
  std::vector<std::pair<std::string, RankScore>> out;
  for (auto i : order) out.emplace_back(defmat.synset_ids()[i], ranks[i]);
  return out;
}

}  // namespace convis::simcore
