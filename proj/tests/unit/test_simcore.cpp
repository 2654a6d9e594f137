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

#include <gtest/gtest.h>

#include <algorithm>

#include "convis/error.hpp"
#include "convis/simcore.hpp"
#include "oracles.hpp"

namespace convis::simcore {
namespace {

const std::filesystem::path kData = CONVIS_TEST_DATA;

struct Fixture {
  lexdb::Lexicon lex;
  lexdb::Hierarchy hier;
  DefinitionMatrix defmat;
};

Fixture random_fixture(oracle::Rng& rng, std::size_t n, std::size_t dim, double repeat = 0.15) {
  auto lex = oracle::random_lexicon(rng, n);
  lexdb::Hierarchy hier(lex);
  auto defmat = oracle::random_defmat(rng, hier, dim, repeat);
  return {std::move(lex), std::move(hier), std::move(defmat)};
}

TEST(RankScore, ValueAndOrder) {
  EXPECT_DOUBLE_EQ(RankScore(3, 4).value(), 0.75);
  EXPECT_LT(RankScore(1, 4), RankScore(2, 4));
  EXPECT_DOUBLE_EQ(RankScore().value(), 0.0);
}

TEST(RankCounts, TiesShareTheLowerRank) {
  const std::vector<double> z{0.5, 0.1, 0.5, 0.9, 0.1};
  EXPECT_EQ(rank_counts(z), (std::vector<std::size_t>{2, 0, 2, 4, 0}));
}

TEST(Rank, MatchesBruteForceWithTies) {
  oracle::Rng rng(11);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t n = 2 + rng() % 199;  // |T| <= 200
    auto f = random_fixture(rng, n, 8 + rng() % 24, 0.2);
    for (int q = 0; q < 3; ++q) {
      auto x = oracle::random_vector(rng, f.defmat.dimension());
      if (q == 2) {
        // Exactly a definition row: its z is 1 and it ties with its copies.
        const auto r = f.defmat.row(rng() % n);
        x.assign(r.begin(), r.end());
      }
      const auto all = rank_all(x, f.defmat);
      ASSERT_EQ(all.size(), n);
      for (std::size_t t = 0; t < n; ++t) {
        const auto& id = f.defmat.synset_ids()[t];
        const auto want = oracle::rank_count(x, id, f.defmat);
        ASSERT_EQ(all[t].count(), want) << "trial " << trial << " synset " << id;
        ASSERT_EQ(rank_sim(x, id, f.defmat), all[t]);
        ASSERT_LE(all[t].count(), n - 1);  // max value is (|T| - 1) / |T|
      }
    }
  }
}

TEST(Rank, ZAllAgreesBitwiseWithZScore) {
  oracle::Rng rng(5);
  auto f = random_fixture(rng, 40, 16);
  const auto x = oracle::random_vector(rng, 16);
  const auto z = z_all(x, f.defmat);
  for (std::size_t t = 0; t < f.defmat.size(); ++t) {
    EXPECT_EQ(z[t], z_score(x, f.defmat.synset_ids()[t], f.defmat));
  }
}

TEST(Rank, ScaleInvariantForPowersOfTwo) {
  oracle::Rng rng(6);
  auto f = random_fixture(rng, 60, 12);
  for (int i = 0; i < 20; ++i) {
    const auto x = oracle::random_vector(rng, 12);
    for (float s : {0.25f, 2.0f, 1024.0f}) {
      auto y = x;
      for (auto& v : y) v *= s;
      EXPECT_EQ(rank_all(x, f.defmat), rank_all(y, f.defmat));
    }
  }
}

TEST(MaxRank, MatchesEnumerationOverDescendants) {
  oracle::Rng rng(7);
  for (int trial = 0; trial < 40; ++trial) {
    auto f = random_fixture(rng, 3 + rng() % 48, 10, 0.15);
    for (int q = 0; q < 3; ++q) {
      const auto x = oracle::random_vector(rng, 10);
      for (const auto& s : f.lex.synsets()) {
        const auto got = max_rank_sim(x, s.id, f.hier, f.defmat);
        ASSERT_EQ(got.count(), oracle::max_rank_count(x, s.id, f.lex, f.defmat));
        // Dominance: max over S_s includes s itself.
        ASSERT_GE(got, rank_sim(x, s.id, f.defmat));
        // Monotone up the hierarchy.
        for (const auto& a : lexdb::ancestors(f.hier, s.id)) {
          ASSERT_GE(max_rank_sim(x, a, f.hier, f.defmat), got);
        }
      }
    }
  }
}

TEST(MaxRank, LeafEqualsRank) {
  oracle::Rng rng(8);
  auto f = random_fixture(rng, 30, 8);
  const auto x = oracle::random_vector(rng, 8);
  for (const auto& s : f.lex.synsets()) {
    if (f.hier.children_ids(s.id).empty()) {
      EXPECT_EQ(max_rank_sim(x, s.id, f.hier, f.defmat), rank_sim(x, s.id, f.defmat));
    }
  }
}

TEST(MaxRank, WorksWhenDefinitionRowsComeFromAnotherHierarchy) {
  oracle::Rng rng(9);
  auto f = random_fixture(rng, 25, 8);
  // Sub-hierarchy keeps a subset of nodes; rows resolve by id.
  const auto seed = f.lex.synsets().front().id;
  const auto sub = lexdb::filter_hierarchy(f.lex, {seed});
  const auto x = oracle::random_vector(rng, 8);
  for (const auto& n : sub.nodes()) {
    const auto rows = descendant_rows(sub, n.id, f.defmat);
    const auto z = z_all(x, f.defmat);
    double best = -2;
    for (const auto& d : lexdb::descendants(sub, n.id)) best = std::max(best, z[f.defmat.index_of(d)]);
    EXPECT_EQ(max_rank_sim(x, n.id, sub, f.defmat).count(),
              static_cast<std::size_t>(std::count_if(z.begin(), z.end(), [&](double v) { return v < best; })));
  }
}

TEST(TopConcepts, SortedAndTieBrokenById) {
  oracle::Rng rng(10);
  auto f = random_fixture(rng, 50, 8, 0.3);
  const auto x = oracle::random_vector(rng, 8);
  const auto top = top_concepts(x, f.defmat, 50);
  ASSERT_EQ(top.size(), 50u);
  for (std::size_t i = 1; i < top.size(); ++i) {
    ASSERT_GE(top[i - 1].second, top[i].second);
    if (top[i - 1].second == top[i].second) ASSERT_LT(top[i - 1].first, top[i].first);
  }
  // k = 1 is the synset of maximal z.
  const auto z = z_all(x, f.defmat);
  const auto best = std::max_element(z.begin(), z.end()) - z.begin();
  EXPECT_EQ(top_concepts(x, f.defmat, 1).front().first, f.defmat.synset_ids()[best]);
  EXPECT_THROW(top_concepts(x, f.defmat, 0), InvalidArgument);
}

TEST(DefinitionMatrix, Validation) {
  EmbeddingTable t;
  t.ids = {"b", "a"};
  t.dimension = 1;
  t.values = {1.0f, 1.0f};
  t.digest_hex = std::string(64, '0');
  EXPECT_THROW(DefinitionMatrix{t}, ValidationError);  // unsorted
  t.ids = {"a", "b"};
  t.values = {1.0f, 0.5f};
  EXPECT_THROW(DefinitionMatrix{t}, ValidationError);  // not unit norm
  t.values = {1.0f};
  EXPECT_THROW(DefinitionMatrix{t}, ValidationError);  // shape
}

TEST(BuildDefinitions, CachedOnDiskKeyedByModelAndHierarchy) {
  const auto dir = std::filesystem::temp_directory_path() / "convis-defmat-test";
  std::filesystem::remove_all(dir);
  const lexdb::Hierarchy hier(lexdb::load_lexicon(kData / "fixture_lexicon.jsonl"));
  auto inner = std::make_shared<encoder::MockHashBackend>(32);
  encoder::InstrumentedBackend backend(inner);

  BuildStats st;
  const auto a = build_definition_matrix(hier, backend, dir, &st);
  EXPECT_FALSE(st.cache_hit);
  EXPECT_EQ(st.text_calls, hier.size());
  EXPECT_EQ(backend.text_calls(), hier.size());
  EXPECT_TRUE(std::filesystem::exists(st.cache_file));

  backend.reset();
  const auto b = build_definition_matrix(hier, backend, dir, &st);
  EXPECT_TRUE(st.cache_hit);
  EXPECT_EQ(backend.text_calls(), 0u);
  EXPECT_EQ(a.table().values, b.table().values);

  // Another model id misses.
  encoder::InstrumentedBackend other(std::make_shared<encoder::MockHashBackend>(16));
  build_definition_matrix(hier, other, dir, &st);
  EXPECT_FALSE(st.cache_hit);
  EXPECT_EQ(other.text_calls(), hier.size());

  // A corrupt cache file is rebuilt.
  write_file_bytes(definition_cache_path(dir, backend.model_id(), hier.content_hash()),
                   std::vector<std::uint8_t>{'j', 'u', 'n', 'k'});
  backend.reset();
  build_definition_matrix(hier, backend, dir, &st);
  EXPECT_FALSE(st.cache_hit);
  EXPECT_EQ(backend.text_calls(), hier.size());
  std::filesystem::remove_all(dir);
}

TEST(BuildDefinitions, RowsAreDefinitionEmbeddings) {
  const lexdb::Hierarchy hier(lexdb::load_lexicon(kData / "fixture_lexicon.jsonl"));
  encoder::MockHashBackend m(32);
  const auto d = build_definition_matrix(hier, m, std::nullopt, nullptr, 7);
  for (std::size_t i = 0; i < hier.size(); ++i) {
    const auto e = m.embed_text(hier.node(i).definition);
    EXPECT_TRUE(std::equal(e.begin(), e.end(), d.row(i).begin()));
  }
  EXPECT_EQ(d.hierarchy_hash(), hier.content_hash());
}

}  // namespace
}  // namespace convis::simcore
