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

#include <compare>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "convis/embedding_table.hpp"
#include "convis/encoder.hpp"
#include "convis/lexdb.hpp"

namespace convis::simcore {

// |G| / |T|: the number of synsets with strictly smaller z over the hierarchy
// size. Kept as an exact fraction; value() is the only rounding step.
class RankScore {
 public:
  constexpr RankScore() = default;
  constexpr RankScore(std::size_t count, std::size_t total) : count_(count), total_(total) {}

  constexpr std::size_t count() const noexcept { return count_; }
  constexpr std::size_t total() const noexcept { return total_; }
  double value() const noexcept {
    return total_ == 0 ? 0.0 : static_cast<double>(count_) / static_cast<double>(total_);
  }

  friend constexpr bool operator==(const RankScore&, const RankScore&) = default;
  // Scores are only comparable over the same hierarchy.
  friend constexpr auto operator<=>(const RankScore& a, const RankScore& b) {
    return a.count_ <=> b.count_;
  }

 private:
  std::size_t count_ = 0;
  std::size_t total_ = 0;
};

// One unit-norm definition embedding per synset, rows in sorted-id order.
class DefinitionMatrix {
 public:
  DefinitionMatrix() = default;
  // Validates unique sorted ids, row count, finite unit-norm rows (1e-6).
  explicit DefinitionMatrix(EmbeddingTable table);

  std::size_t size() const noexcept { return table_.rows(); }
  std::size_t dimension() const noexcept { return table_.dimension; }
  const std::vector<std::string>& synset_ids() const noexcept { return table_.ids; }
  std::span<const float> row(std::size_t i) const { return table_.row(i); }
  // encoder::norm(row(i)), computed once at construction.
  double row_norm(std::size_t i) const { return row_norms_[i]; }
  const std::string& model_id() const noexcept { return table_.model_id; }
  const std::string& hierarchy_hash() const noexcept { return table_.digest_hex; }
  const EmbeddingTable& table() const noexcept { return table_; }

  bool contains(std::string_view id) const { return index_.contains(std::string(id)); }
  std::size_t index_of(std::string_view id) const;  // throws NotFound

 private:
  EmbeddingTable table_;
  std::vector<double> row_norms_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct BuildStats {
  bool cache_hit = false;
  std::size_t text_calls = 0;
  std::filesystem::path cache_file;
};

// Cache file for (model_id, hierarchy hash) inside cache_dir.
std::filesystem::path definition_cache_path(const std::filesystem::path& cache_dir,
                                            const std::string& model_id,
                                            const std::string& hierarchy_hash);

// Embeds every definition of the hierarchy. When cache_dir is given, a
// matching cache file is reused (zero encoder calls) and a fresh build is
// persisted there. A backend failure discards the partial build.
DefinitionMatrix build_definition_matrix(const lexdb::Hierarchy& hier,
                                         encoder::EncoderBackend& backend,
                                         const std::optional<std::filesystem::path>& cache_dir,
                                         BuildStats* stats = nullptr,
                                         std::size_t batch_size = 256);

double z_score(std::span<const float> x, std::string_view s, const DefinitionMatrix& defmat);

// z for every row in one pass over the matrix.
std::vector<double> z_all(std::span<const float> x, const DefinitionMatrix& defmat);

RankScore rank_sim(std::span<const float> x, std::string_view s, const DefinitionMatrix& defmat);

// Equals rank_sim for every row; one sort, tie groups share the count of
// strictly smaller values.
std::vector<RankScore> rank_all(std::span<const float> x, const DefinitionMatrix& defmat);
std::vector<std::size_t> rank_counts(std::span<const double> z);

// Rows of defmat that belong to the reflexive descendant set of s.
std::vector<std::size_t> descendant_rows(const lexdb::Hierarchy& hier, std::string_view s,
                                         const DefinitionMatrix& defmat);

// max over rows of rank_sim, evaluated as the rank of the maximal z among
// them (rank is monotone in z).
RankScore max_rank_from_z(std::span<const double> z, std::span<const std::size_t> rows);

RankScore max_rank_sim(std::span<const float> x, std::string_view s, const lexdb::Hierarchy& hier,
                       const DefinitionMatrix& defmat);

// k best synsets by rank, descending, id-lexicographic tie-break.
std::vector<std::pair<std::string, RankScore>> top_concepts(std::span<const float> x,
                                                            const DefinitionMatrix& defmat,
                                                            std::size_t k);

}  // namespace convis::simcore
