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

#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>

namespace convis::oracle {

namespace {

std::string node_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "s%03zu", i);
  return buf;
}

}  // namespace

lexdb::Lexicon random_lexicon(Rng& rng, std::size_t n, double repeat_definition, std::size_t roots) {
  std::vector<lexdb::Synset> nodes;
  std::bernoulli_distribution repeat(repeat_definition);
  for (std::size_t i = 0; i < n; ++i) {
    lexdb::Synset s;
    s.id = node_name(i);
    s.lemmas = {"lemma" + std::to_string(i), "word" + std::to_string(i % 7)};
    if (i > 0 && repeat(rng)) {
      s.definition = nodes[std::uniform_int_distribution<std::size_t>(0, i - 1)(rng)].definition;
    } else {
      s.definition = "definition number " + std::to_string(i) + " tag " + std::to_string(rng() % 1000);
    }
    if (i >= roots) {
      const std::size_t k = std::uniform_int_distribution<std::size_t>(1, std::min<std::size_t>(3, i))(rng);
      std::set<std::string> parents;
      while (parents.size() < k) {
        parents.insert(node_name(std::uniform_int_distribution<std::size_t>(0, i - 1)(rng)));
      }
      s.hypernym_ids.assign(parents.begin(), parents.end());
    }
    nodes.push_back(std::move(s));
  }
  std::shuffle(nodes.begin(), nodes.end(), rng);
  return lexdb::Lexicon(std::move(nodes));
}

Image random_image(Rng& rng, int width, int height, int channels) {
  Image img(width, height, channels);
  for (auto& p : img.pixels()) p = static_cast<std::uint8_t>(rng() & 0xff);
  return img;
}

encoder::Embedding random_vector(Rng& rng, std::size_t dim) {
  std::normal_distribution<double> nd;
  std::vector<double> v(dim);
  double n = 0;
  do {
    n = 0;
    for (auto& x : v) {
      x = nd(rng);
      n += x * x;
    }
  } while (n == 0);
  n = std::sqrt(n);
  encoder::Embedding out(dim);
  for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(v[i] / n);
  return out;
}

simcore::DefinitionMatrix random_defmat(Rng& rng, const lexdb::Hierarchy& hier, std::size_t dim,
                                        double repeat_row) {
  EmbeddingTable t;
  t.dimension = dim;
  t.model_id = "random";
  t.digest_hex = hier.content_hash();
  std::bernoulli_distribution repeat(repeat_row);
  for (std::size_t i = 0; i < hier.size(); ++i) {
    t.ids.push_back(hier.node(i).id);
    encoder::Embedding v;
    if (i > 0 && repeat(rng)) {
      const auto j = std::uniform_int_distribution<std::size_t>(0, i - 1)(rng);
      v.assign(t.values.begin() + j * dim, t.values.begin() + (j + 1) * dim);
    } else {
      v = random_vector(rng, dim);
    }
    t.values.insert(t.values.end(), v.begin(), v.end());
  }
  return simcore::DefinitionMatrix(std::move(t));
}

bool is_a(const lexdb::Lexicon& lex, const std::string& node, const std::string& ancestor) {
  std::set<std::string> seen;
  std::vector<std::string> stack{node};
  while (!stack.empty()) {
    const std::string cur = stack.back();
    stack.pop_back();
    if (cur == ancestor) return true;
    if (!seen.insert(cur).second) continue;
    for (const auto& p : lex.at(cur).hypernym_ids) stack.push_back(p);
  }
  return false;
}

std::set<std::string> descendant_set(const lexdb::Lexicon& lex, const std::string& s) {
  std::set<std::string> out;
  for (const auto& n : lex.synsets()) {
    if (is_a(lex, n.id, s)) out.insert(n.id);
  }
  return out;
}

double cosine(const std::vector<float>& a, std::span<const float> b) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  return std::clamp(d / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

namespace {

std::size_t count_below(const std::vector<float>& x, double threshold,
                        const simcore::DefinitionMatrix& defmat) {
  std::size_t g = 0;
  for (std::size_t t = 0; t < defmat.size(); ++t) {
    if (cosine(x, defmat.row(t)) < threshold) ++g;
  }
  return g;
}

}  // namespace

std::size_t rank_count(const std::vector<float>& x, const std::string& s,
                       const simcore::DefinitionMatrix& defmat) {
  return count_below(x, cosine(x, defmat.row(defmat.index_of(s))), defmat);
}

std::size_t max_rank_count(const std::vector<float>& x, const std::string& s,
                           const lexdb::Lexicon& lex, const simcore::DefinitionMatrix& defmat) {
  double best = -2.0;
  for (const auto& d : descendant_set(lex, s)) best = std::max(best, cosine(x, defmat.row(defmat.index_of(d))));
  return count_below(x, best, defmat);
}

std::vector<double> saliency_map(const Image& image, const std::string& s,
                                 const saliency::SaliencyConfig& cfg,
                                 encoder::EncoderBackend& backend,
                                 const simcore::DefinitionMatrix& defmat,
                                 const lexdb::Lexicon& lex) {
  const int W = image.width();
  const int H = image.height();
  const bool fit = cfg.boundary_policy == saliency::BoundaryPolicy::kFitOnly;
  const bool contain = cfg.window_mode == saliency::WindowMode::kContainment;

  struct Scored {
    int i, j;        // anchor column, row
    Rect large;      // pixels covered by the large patch
    double r;
  };
  auto crop_at = [&](int i, int j, int delta) {
    Rect r;
    r.width = std::min(delta, W);
    r.height = std::min(delta, H);
    r.x = i;
    r.y = j;
    if (!fit) {
      if (r.x + r.width > W) r.x = W - r.width;
      if (r.y + r.height > H) r.y = H - r.height;
    }
    return r;
  };

  std::vector<Scored> scores;
  for (int j = 0; j < H; j += cfg.stride) {
    for (int i = 0; i < W; i += cfg.stride) {
      if (fit && (i + cfg.delta_large > W || j + cfg.delta_large > H)) continue;
      const Rect sr = crop_at(i, j, cfg.delta_small);
      const Rect lr = crop_at(i, j, cfg.delta_large);
      const auto es = backend.embed_image(image.crop(sr));
      const auto el = backend.embed_image(image.crop(lr));
      std::vector<float> e(es.size());
      for (std::size_t k = 0; k < e.size(); ++k) e[k] = (es[k] + el[k]) * 0.5f;
      const double r = static_cast<double>(max_rank_count(e, s, lex, defmat)) /
                       static_cast<double>(defmat.size());
      scores.push_back({i, j, lr, r});
    }
  }

  std::vector<double> y(static_cast<std::size_t>(W) * H, 0.0);
  for (int row = 0; row < H; ++row) {
    for (int col = 0; col < W; ++col) {
      double sum = 0;
      int n = 0;
      for (const auto& sc : scores) {
        bool in;
        if (contain) {
          in = col >= sc.large.x && col < sc.large.x + sc.large.width && row >= sc.large.y &&
               row < sc.large.y + sc.large.height;
        } else {
          in = std::abs(sc.i - col) < cfg.delta_large && std::abs(sc.j - row) < cfg.delta_large;
        }
        if (in) {
          sum += sc.r;
          ++n;
        }
      }
      y[static_cast<std::size_t>(row) * W + col] = n ? sum / n : 0.0;
    }
  }
  return y;
}

double auroc(const std::vector<double>& pos, const std::vector<double>& neg) {
  double wins = 0;
  for (double p : pos) {
    for (double q : neg) {
      if (p > q) wins += 1.0;
      else if (p == q) wins += 0.5;
    }
  }
  return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

namespace {

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int a) { return parent[a] == a ? a : parent[a] = find(parent[a]); }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

bool sample_hit(const saliency::SaliencyMap& m, const evalkit::Box& gt, double tau, double delta_hat) {
  const int W = m.width, H = m.height;
  UnionFind uf(W * H);
  auto on = [&](int x, int y) { return m.values[y * W + x] > tau; };
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      if (!on(x, y)) continue;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int nx = x + dx, ny = y + dy;
          if (nx >= 0 && ny >= 0 && nx < W && ny < H && on(nx, ny)) uf.unite(y * W + x, ny * W + nx);
        }
      }
    }
  }
  // Component sizes; ties resolved towards the smallest root (first pixel).
  std::map<int, int> size;
  for (int p = 0; p < W * H; ++p) {
    if (m.values[p] > tau) ++size[uf.find(p)];
  }
  if (size.empty()) return false;
  int best = -1, best_size = 0;
  for (auto [root, n] : size) {
    if (n > best_size) {
      best = root;
      best_size = n;
    }
  }
  int x0 = W, y0 = H, x1 = 0, y1 = 0;
  for (int p = 0; p < W * H; ++p) {
    if (m.values[p] > tau && uf.find(p) == best) {
      x0 = std::min(x0, p % W);
      y0 = std::min(y0, p / W);
      x1 = std::max(x1, p % W + 1);
      y1 = std::max(y1, p / W + 1);
    }
  }
  long inter = 0;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const bool a = x >= x0 && x < x1 && y >= y0 && y < y1;
      const bool b = x >= gt.x_min && x < gt.x_max && y >= gt.y_min && y < gt.y_max;
      if (a && b) ++inter;
    }
  }
  const long area_a = static_cast<long>(x1 - x0) * (y1 - y0);
  const long area_b = static_cast<long>(gt.x_max - gt.x_min) * (gt.y_max - gt.y_min);
  return static_cast<double>(inter) / static_cast<double>(area_a + area_b - inter) >= delta_hat;
}

}  // namespace

double max_box_acc(const std::vector<saliency::SaliencyMap>& maps,
                   const std::vector<evalkit::Box>& boxes, double delta_hat,
                   const std::vector<double>& taus) {
  double best = 0;
  for (double tau : taus) {
    int hits = 0;
    for (std::size_t i = 0; i < maps.size(); ++i) hits += sample_hit(maps[i], boxes[i], tau, delta_hat);
    best = std::max(best, static_cast<double>(hits) / static_cast<double>(maps.size()));
  }
  return best;
}

}  // namespace convis::oracle
