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

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace convis::lexdb {

struct Synset {
  std::string id;                         // e.g. "car.n.01"
  std::vector<std::string> lemmas;
  std::string definition;
  std::vector<std::string> hypernym_ids;  // direct "is a" parents
};

// A validated set of synsets: unique ids, non-empty definitions, resolvable
// hypernyms and an acyclic "is a" relation.
class Lexicon {
 public:
  // Throws ValidationError on duplicate ids, dangling hypernyms or cycles.
  explicit Lexicon(std::vector<Synset> synsets);

  std::size_t size() const noexcept { return synsets_.size(); }
  bool contains(std::string_view id) const;
  const Synset& at(std::string_view id) const;  // throws NotFound
  const std::vector<Synset>& synsets() const noexcept { return synsets_; }

 private:
  std::vector<Synset> synsets_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Immutable "is a" DAG. Nodes are stored in lexicographic id order, so node
// index i corresponds to the i-th smallest id.
class Hierarchy {
 public:
  using NodeIndex = std::size_t;

  // Builds from synsets whose hypernyms all resolve within the set.
  explicit Hierarchy(const Lexicon& lexicon);

  std::size_t size() const noexcept { return nodes_.size(); }
  bool contains(std::string_view id) const;
  NodeIndex index_of(std::string_view id) const;  // throws NotFound
  const Synset& node(NodeIndex i) const { return nodes_.at(i); }
  const Synset& at(std::string_view id) const { return nodes_[index_of(id)]; }
  const std::vector<Synset>& nodes() const noexcept { return nodes_; }

  const std::vector<NodeIndex>& parents(NodeIndex i) const { return parents_.at(i); }
  const std::vector<NodeIndex>& children(NodeIndex i) const { return children_.at(i); }
  std::vector<std::string> children_ids(std::string_view id) const;
  std::vector<std::string> root_ids() const;

  // Reflexive descendant closure, sorted by node index, each node once.
  std::vector<NodeIndex> descendant_indices(NodeIndex s) const;

  // SHA-256 hex of the canonical node serialization; changes with any id,
  // definition or edge.
  const std::string& content_hash() const noexcept { return content_hash_; }

 private:
  std::vector<Synset> nodes_;
  std::unordered_map<std::string, NodeIndex> index_;
  std::vector<std::vector<NodeIndex>> parents_;
  std::vector<std::vector<NodeIndex>> children_;
  std::string content_hash_;
};

// One JSON object per line: {"id", "lemmas", "definition", "hypernyms"}.
// Blank lines are skipped. Errors carry the 1-based line number.
Lexicon load_lexicon(const std::filesystem::path& path);
Lexicon parse_lexicon(std::string_view text, const std::string& source_name = "<memory>");
std::string serialize_lexicon(const Lexicon& lexicon);

// One synset id per line; '#' starts a comment.
std::vector<std::string> load_seed_list(const std::filesystem::path& path);
std::vector<std::string> parse_seed_list(std::string_view text);

// Seeds plus every transitive hypernym. Throws NotFound for an unknown seed.
Hierarchy filter_hierarchy(const Lexicon& lexicon, const std::vector<std::string>& seed_ids);

// Every node whose "is a" closure contains s, including s. Sorted ids.
std::vector<std::string> descendants(const Hierarchy& hier, std::string_view s);

// All transitive hypernyms, nearest first (BFS by depth); ties within one
// depth are broken lexicographically.
std::vector<std::string> ancestors(const Hierarchy& hier, std::string_view s);

// Case-insensitive substring match over ids and lemmas. Exact matches (id,
// or the id's head word, or a lemma equal to the query) come first, then the
// rest; both groups lexicographic. At most `limit` results.
std::vector<std::string> search(const Hierarchy& hier, std::string_view query, std::size_t limit);

// Shortest path length treating "is a" edges as undirected. Throws NotFound
// for unknown ids and ValidationError when no path exists.
std::size_t semantic_distance(const Hierarchy& hier, std::string_view a, std::string_view b);

}  // namespace convis::lexdb
