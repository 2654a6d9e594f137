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
#include <map>
#include <queue>

#include "convis/error.hpp"
#include "convis/lexdb.hpp"
#include "oracles.hpp"

namespace convis::lexdb {
namespace {

const std::filesystem::path kData = CONVIS_TEST_DATA;

Lexicon fixture() { return load_lexicon(kData / "fixture_lexicon.jsonl"); }

std::string line(const std::string& id, const std::string& hyper = "") {
  std::string h = hyper.empty() ? "[]" : "[\"" + hyper + "\"]";
  return "{\"id\": \"" + id + "\", \"lemmas\": [\"x\"], \"definition\": \"d " + id +
         "\", \"hypernyms\": " + h + "}\n";
}

TEST(Lexicon, LoadsFixture) {
  const auto lex = fixture();
  EXPECT_EQ(lex.size(), 26u);
  EXPECT_EQ(lex.at("dog.n.01").hypernym_ids,
            (std::vector<std::string>{"canine.n.02", "domestic_animal.n.01"}));
}

TEST(Lexicon, ParseErrorCarriesLineNumber) {
  const std::string text = line("a") + "\n" + "{not json}\n";
  try {
    parse_lexicon(text, "mem");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(Lexicon, RejectsStructuralProblems) {
  EXPECT_THROW(parse_lexicon(line("a") + line("a")), ValidationError);
  EXPECT_THROW(parse_lexicon(line("a", "missing")), ValidationError);
  EXPECT_THROW(parse_lexicon(line("a", "b") + line("b", "c") + line("c", "a")), ValidationError);
  EXPECT_THROW(parse_lexicon(line("a", "a")), ValidationError);
  EXPECT_THROW(parse_lexicon("{\"id\": \"a\", \"definition\": \"\"}\n"), ParseError);
}

TEST(Lexicon, SerializeRoundTrip) {
  const auto lex = fixture();
  const auto again = parse_lexicon(serialize_lexicon(lex));
  EXPECT_EQ(Hierarchy(again).content_hash(), Hierarchy(lex).content_hash());
}

TEST(Hierarchy, OrderedByIdWithSortedEdges) {
  const Hierarchy h(fixture());
  for (std::size_t i = 1; i < h.size(); ++i) EXPECT_LT(h.node(i - 1).id, h.node(i).id);
  EXPECT_EQ(h.root_ids(), std::vector<std::string>{"entity.n.01"});
  EXPECT_EQ(h.children_ids("dog.n.01"), std::vector<std::string>{"puppy.n.01"});
  EXPECT_TRUE(h.children_ids("puppy.n.01").empty());
}

TEST(Hierarchy, ContentHashTracksEdits) {
  auto synsets = fixture().synsets();
  const std::string base = Hierarchy(Lexicon(synsets)).content_hash();
  synsets[3].definition += " (edited)";
  EXPECT_NE(Hierarchy(Lexicon(synsets)).content_hash(), base);
}

TEST(Descendants, DiamondNodeReachedFromBothParents) {
  const Hierarchy h(fixture());
  const auto dom = descendants(h, "domestic_animal.n.01");
  EXPECT_EQ(dom, (std::vector<std::string>{"dog.n.01", "domestic_animal.n.01", "puppy.n.01"}));
  const auto carn = descendants(h, "carnivore.n.01");
  EXPECT_TRUE(std::binary_search(carn.begin(), carn.end(), "dog.n.01"));
  EXPECT_EQ(descendants(h, "puppy.n.01"), std::vector<std::string>{"puppy.n.01"});
  EXPECT_EQ(descendants(h, "entity.n.01").size(), h.size());
}

TEST(Ancestors, NearestFirstAndLexicographicWithinDepth) {
  const Hierarchy h(fixture());
  const auto a = ancestors(h, "dog.n.01");
  ASSERT_GE(a.size(), 2u);
  EXPECT_EQ(a[0], "canine.n.02");
  EXPECT_EQ(a[1], "domestic_animal.n.01");
  EXPECT_EQ(a.back(), "entity.n.01");
  EXPECT_TRUE(ancestors(h, "entity.n.01").empty());
}

TEST(Filter, KeepsSeedsAndAllHypernyms) {
  const auto lex = fixture();
  const Hierarchy h = filter_hierarchy(lex, {"puppy.n.01"});
  std::vector<std::string> ids;
  for (const auto& n : h.nodes()) ids.push_back(n.id);
  EXPECT_EQ(ids, (std::vector<std::string>{"animal.n.01", "canine.n.02", "carnivore.n.01", "dog.n.01",
                                           "domestic_animal.n.01", "entity.n.01", "object.n.01",
                                           "organism.n.01", "physical_entity.n.01", "puppy.n.01"}));
  EXPECT_THROW(filter_hierarchy(lex, {"nope.n.01"}), NotFound);
}

TEST(SeedList, CommentsAndBlankLines) {
  EXPECT_EQ(parse_seed_list("# header\n dog.n.01 \n\ncat.n.01 # trailing\n"),
            (std::vector<std::string>{"dog.n.01", "cat.n.01"}));
}

TEST(Search, ExactBeforeSubstring) {
  const Hierarchy h(fixture());
  const auto r = search(h, "CAT", 10);
  ASSERT_FALSE(r.empty());
  EXPECT_EQ(r[0], "cat.n.01");
  EXPECT_EQ(search(h, "dog", 1), std::vector<std::string>{"dog.n.01"});
  EXPECT_TRUE(search(h, "zzzz", 10).empty());
  const auto auto_hits = search(h, "auto", 10);
  EXPECT_EQ(auto_hits.front(), "car.n.01");
}

TEST(Distance, FixtureCases) {
  const Hierarchy h(fixture());
  EXPECT_EQ(semantic_distance(h, "dog.n.01", "dog.n.01"), 0u);
  EXPECT_EQ(semantic_distance(h, "dog.n.01", "puppy.n.01"), 1u);
  EXPECT_EQ(semantic_distance(h, "dog.n.01", "wolf.n.01"), 2u);
  EXPECT_EQ(semantic_distance(h, "dog.n.01", "domestic_animal.n.01"), 1u);
  EXPECT_THROW(semantic_distance(h, "dog.n.01", "unicorn.n.01"), NotFound);
}

TEST(Distance, DisconnectedIsValidationError) {
  const Hierarchy h(parse_lexicon(line("a") + line("b")));
  EXPECT_THROW(semantic_distance(h, "a", "b"), ValidationError);
}

// Floyd-Warshall over the undirected edge set.
std::map<std::pair<std::string, std::string>, int> all_pairs(const Lexicon& lex) {
  const auto& s = lex.synsets();
  const int n = static_cast<int>(s.size());
  const int inf = 1 << 20;
  std::map<std::string, int> idx;
  for (int i = 0; i < n; ++i) idx[s[i].id] = i;
  std::vector<std::vector<int>> d(n, std::vector<int>(n, inf));
  for (int i = 0; i < n; ++i) {
    d[i][i] = 0;
    for (const auto& p : s[i].hypernym_ids) d[i][idx[p]] = d[idx[p]][i] = 1;
  }
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) d[i][j] = std::min(d[i][j], d[i][k] + d[k][j]);
  std::map<std::pair<std::string, std::string>, int> out;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) out[{s[i].id, s[j].id}] = d[i][j] >= inf ? -1 : d[i][j];
  return out;
}

TEST(Property, RandomDagsAgainstBruteForce) {
  oracle::Rng rng(20240611);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 5 + rng() % 45;
    const std::size_t roots = 1 + rng() % 2;
    const auto lex = oracle::random_lexicon(rng, n, 0.1, roots);
    const Hierarchy h(lex);
    const auto dist = all_pairs(lex);
    for (const auto& a : lex.synsets()) {
      const auto desc = descendants(h, a.id);
      const auto expect = oracle::descendant_set(lex, a.id);
      EXPECT_EQ(std::set<std::string>(desc.begin(), desc.end()), expect);
      // Monotonicity: every ancestor's descendant set contains ours.
      for (const auto& anc : ancestors(h, a.id)) {
        const auto up = descendants(h, anc);
        EXPECT_TRUE(std::includes(up.begin(), up.end(), desc.begin(), desc.end()));
      }
      for (const auto& b : lex.synsets()) {
        const int want = dist.at({a.id, b.id});
        if (want < 0) {
          EXPECT_THROW(semantic_distance(h, a.id, b.id), ValidationError);
          continue;
        }
        const auto ab = semantic_distance(h, a.id, b.id);
        EXPECT_EQ(static_cast<int>(ab), want);
        EXPECT_EQ(ab, semantic_distance(h, b.id, a.id));
      }
    }
    // Triangle inequality on a sample of triples within one component.
    for (int k = 0; k < 50; ++k) {
      const auto& a = lex.synsets()[rng() % n].id;
      const auto& b = lex.synsets()[rng() % n].id;
      const auto& c = lex.synsets()[rng() % n].id;
      const int ab = dist.at({a, b}), bc = dist.at({b, c}), ac = dist.at({a, c});
      if (ab < 0 || bc < 0) continue;
      EXPECT_LE(ac, ab + bc);
    }
  }
}

}  // namespace
}  // namespace convis::lexdb
