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

#include "convis/lexdb.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <queue>
#include <sstream>

#include "convis/error.hpp"
#include "convis/image.hpp"

namespace convis::lexdb {

using json = nlohmann::json;

namespace {

// Throws ValidationError naming one node on a cycle.
void check_acyclic(const std::vector<Synset>& synsets,
                   const std::unordered_map<std::string, std::size_t>& index) {
  enum class Mark : std::uint8_t { kNew, kActive, kDone };
  std::vector<Mark> mark(synsets.size(), Mark::kNew);
  // Iterative DFS over hypernym edges.
  for (std::size_t start = 0; start < synsets.size(); ++start) {
    if (mark[start] != Mark::kNew) continue;
    std::vector<std::pair<std::size_t, std::size_t>> stack{{start, 0}};
    mark[start] = Mark::kActive;
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      const auto& hyper = synsets[node].hypernym_ids;
      if (next == hyper.size()) {
        mark[node] = Mark::kDone;
        stack.pop_back();
        continue;
      }
      std::size_t parent = index.at(hyper[next++]);
      if (mark[parent] == Mark::kActive) {
        throw ValidationError("cycle detected in \"is a\" relation at " + synsets[parent].id);
      }
      if (mark[parent] == Mark::kNew) {
        mark[parent] = Mark::kActive;
        stack.emplace_back(parent, 0);
      }
    }
  }
}

std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace

Lexicon::Lexicon(std::vector<Synset> synsets) : synsets_(std::move(synsets)) {
  for (std::size_t i = 0; i < synsets_.size(); ++i) {
    const auto& s = synsets_[i];
    if (s.id.empty()) throw ValidationError("synset with empty id");
    if (s.definition.empty()) throw ValidationError("synset " + s.id + " has an empty definition");
    if (!index_.emplace(s.id, i).second) throw ValidationError("duplicate synset id " + s.id);
  }
  for (auto& s : synsets_) {
    for (const auto& h : s.hypernym_ids) {
      if (!index_.contains(h)) {
        throw ValidationError("synset " + s.id + " references unknown hypernym " + h);
      }
    }
    std::sort(s.hypernym_ids.begin(), s.hypernym_ids.end());
    s.hypernym_ids.erase(std::unique(s.hypernym_ids.begin(), s.hypernym_ids.end()),
                         s.hypernym_ids.end());
  }
  check_acyclic(synsets_, index_);
}

bool Lexicon::contains(std::string_view id) const { return index_.contains(std::string(id)); }

const Synset& Lexicon::at(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) throw NotFound("unknown synset " + std::string(id));
  return synsets_[it->second];
}

Hierarchy::Hierarchy(const Lexicon& lexicon) : nodes_(lexicon.synsets()) {
  std::sort(nodes_.begin(), nodes_.end(),
            [](const Synset& a, const Synset& b) { return a.id < b.id; });
  for (NodeIndex i = 0; i < nodes_.size(); ++i) index_.emplace(nodes_[i].id, i);
  parents_.resize(nodes_.size());
  children_.resize(nodes_.size());
  for (NodeIndex i = 0; i < nodes_.size(); ++i) {
    for (const auto& h : nodes_[i].hypernym_ids) {
      auto it = index_.find(h);
      if (it == index_.end()) {
        throw ValidationError("synset " + nodes_[i].id + " references hypernym " + h +
                              " outside the hierarchy");
      }
      parents_[i].push_back(it->second);
      children_[it->second].push_back(i);
    }
  }
  for (auto& p : parents_) std::sort(p.begin(), p.end());
  for (auto& c : children_) std::sort(c.begin(), c.end());

  std::string canon;
  for (const auto& n : nodes_) {
    canon += n.id;
    canon += '\x1f';
    canon += n.definition;
    for (const auto& h : n.hypernym_ids) {
      canon += '\x1f';
      canon += h;
    }
    canon += '\x1e';
  }
  content_hash_ = sha256_hex(canon);
}

bool Hierarchy::contains(std::string_view id) const { return index_.contains(std::string(id)); }

Hierarchy::NodeIndex Hierarchy::index_of(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) throw NotFound("unknown synset " + std::string(id));
  return it->second;
}

std::vector<std::string> Hierarchy::children_ids(std::string_view id) const {
  std::vector<std::string> out;
  for (NodeIndex c : children_[index_of(id)]) out.push_back(nodes_[c].id);
  return out;
}

std::vector<std::string> Hierarchy::root_ids() const {
  std::vector<std::string> out;
  for (NodeIndex i = 0; i < nodes_.size(); ++i) {
    if (parents_[i].empty()) out.push_back(nodes_[i].id);
  }
  return out;
}

std::vector<Hierarchy::NodeIndex> Hierarchy::descendant_indices(NodeIndex s) const {
  if (s >= nodes_.size()) throw NotFound("node index out of range");
  std::vector<bool> seen(nodes_.size(), false);
  std::vector<NodeIndex> stack{s};
  seen[s] = true;
  std::vector<NodeIndex> out;
  while (!stack.empty()) {
    NodeIndex n = stack.back();
    stack.pop_back();
    out.push_back(n);
    for (NodeIndex c : children_[n]) {
      if (!seen[c]) {
        seen[c] = true;
        stack.push_back(c);
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

Lexicon parse_lexicon(std::string_view text, const std::string& source_name) {
  std::vector<Synset> synsets;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) {
      if (end == text.size()) break;
      continue;
    }
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(source_name, line_no, std::string("malformed JSON: ") + e.what());
    }
    try {
      Synset s;
      s.id = rec.at("id").get<std::string>();
      s.lemmas = rec.at("lemmas").get<std::vector<std::string>>();
      s.definition = rec.at("definition").get<std::string>();
      s.hypernym_ids = rec.at("hypernyms").get<std::vector<std::string>>();
      if (s.definition.empty()) {
        throw ParseError(source_name, line_no, "empty definition for " + s.id);
      }
      synsets.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw ParseError(source_name, line_no, std::string("malformed record: ") + e.what());
    }
    if (end == text.size()) break;
  }
  return Lexicon(std::move(synsets));
}

Lexicon load_lexicon(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("cannot open lexicon file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_lexicon(ss.str(), path.string());
}

std::string serialize_lexicon(const Lexicon& lexicon) {
  std::string out;
  for (const auto& s : lexicon.synsets()) {
    json rec = {{"id", s.id},
                {"lemmas", s.lemmas},
                {"definition", s.definition},
                {"hypernyms", s.hypernym_ids}};
    out += rec.dump();
    out += '\n';
  }
  return out;
}

std::vector<std::string> parse_seed_list(std::string_view text) {
  std::vector<std::string> ids;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    auto e = line.find_last_not_of(" \t\r");
    ids.push_back(line.substr(b, e - b + 1));
  }
  return ids;
}

std::vector<std::string> load_seed_list(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("cannot open seed list: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_seed_list(ss.str());
}

Hierarchy filter_hierarchy(const Lexicon& lexicon, const std::vector<std::string>& seed_ids) {
  std::unordered_map<std::string, bool> keep;
  std::vector<std::string> stack;
  for (const auto& id : seed_ids) {
    if (!lexicon.contains(id)) throw NotFound("unknown seed synset " + id);
    if (keep.emplace(id, true).second) stack.push_back(id);
  }
  while (!stack.empty()) {
    std::string id = std::move(stack.back());
    stack.pop_back();
    for (const auto& h : lexicon.at(id).hypernym_ids) {
      if (keep.emplace(h, true).second) stack.push_back(h);
    }
  }
  std::vector<Synset> subset;
  subset.reserve(keep.size());
  for (const auto& s : lexicon.synsets()) {
    if (keep.contains(s.id)) subset.push_back(s);
  }
  return Hierarchy(Lexicon(std::move(subset)));
}

std::vector<std::string> descendants(const Hierarchy& hier, std::string_view s) {
  std::vector<std::string> out;
  for (auto i : hier.descendant_indices(hier.index_of(s))) out.push_back(hier.node(i).id);
  return out;
}

std::vector<std::string> ancestors(const Hierarchy& hier, std::string_view s) {
  const auto start = hier.index_of(s);
  std::vector<bool> seen(hier.size(), false);
  seen[start] = true;
  std::vector<Hierarchy::NodeIndex> frontier{start};
  std::vector<std::string> out;
  while (!frontier.empty()) {
    std::vector<Hierarchy::NodeIndex> next;
    for (auto n : frontier) {
      for (auto p : hier.parents(n)) {
        if (!seen[p]) {
          seen[p] = true;
          next.push_back(p);
        }
      }
    }
    // Node index order is id order.
    std::sort(next.begin(), next.end());
    for (auto n : next) out.push_back(hier.node(n).id);
    frontier = std::move(next);
  }
  return out;
}

std::vector<std::string> search(const Hierarchy& hier, std::string_view query, std::size_t limit) {
  const std::string q = to_lower(query);
  if (q.empty() || limit == 0) return {};
  std::vector<std::string> exact, partial;
  for (const auto& n : hier.nodes()) {
    const std::string id = to_lower(n.id);
    const std::string head = id.substr(0, id.find('.'));
    bool is_exact = id == q || head == q;
    bool is_match = id.find(q) != std::string::npos;
    for (const auto& lemma : n.lemmas) {
      const std::string l = to_lower(lemma);
      if (l == q) is_exact = true;
      if (l.find(q) != std::string::npos) is_match = true;
    }
    if (is_exact) {
      exact.push_back(n.id);
    } else if (is_match) {
      partial.push_back(n.id);
    }
  }
  // nodes() is already id-sorted, so both groups are lexicographic.
  exact.insert(exact.end(), partial.begin(), partial.end());
  if (exact.size() > limit) exact.resize(limit);
  return exact;
}

std::size_t semantic_distance(const Hierarchy& hier, std::string_view a, std::string_view b) {
  const auto from = hier.index_of(a);
  const auto to = hier.index_of(b);
  if (from == to) return 0;
  constexpr auto kUnseen = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> dist(hier.size(), kUnseen);
  std::queue<Hierarchy::NodeIndex> q;
  dist[from] = 0;
  q.push(from);
  while (!q.empty()) {
    auto n = q.front();
    q.pop();
    auto visit = [&](Hierarchy::NodeIndex m) {
      if (dist[m] == kUnseen) {
        dist[m] = dist[n] + 1;
        q.push(m);
      }
    };
    for (auto p : hier.parents(n)) visit(p);
    for (auto c : hier.children(n)) visit(c);
    if (dist[to] != kUnseen) return dist[to];
  }
  throw ValidationError("no path between " + std::string(a) + " and " + std::string(b));
}

}  // namespace convis::lexdb
