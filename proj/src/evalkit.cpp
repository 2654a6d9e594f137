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

#include "convis/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "convis/error.hpp"

namespace convis::evalkit {

using json = nlohmann::json;

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

Mask threshold_map(const saliency::SaliencyMap& map, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw InvalidArgument("tau must lie in [0, 1]");
  Mask m{map.width, map.height, std::vector<std::uint8_t>(map.values.size())};
  for (std::size_t i = 0; i < map.values.size(); ++i) m.bits[i] = map.values[i] > tau ? 1 : 0;
  return m;
}

Mask largest_connected_component(const Mask& mask, int connectivity) {
  if (connectivity != 4 && connectivity != 8) throw InvalidArgument("connectivity must be 4 or 8");
  const int W = mask.width;
  const int H = mask.height;
  std::vector<int> label(mask.bits.size(), -1);
  int best_label = -1;
  std::size_t best_area = 0;
  int next_label = 0;
  std::vector<std::pair<int, int>> stack;
  // Row-major scan: the first component to reach a given area is the one
  // with the smallest starting pixel, so strict > keeps the tie rule.
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const std::size_t idx = static_cast<std::size_t>(y) * W + x;
      if (!mask.bits[idx] || label[idx] >= 0) continue;
      const int current = next_label++;
      std::size_t area = 0;
      label[idx] = current;
      stack.assign(1, {x, y});
      while (!stack.empty()) {
        auto [cx, cy] = stack.back();
        stack.pop_back();
        ++area;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            if (dx == 0 && dy == 0) continue;
            if (connectivity == 4 && dx != 0 && dy != 0) continue;
            const int nx = cx + dx;
            const int ny = cy + dy;
            if (nx < 0 || ny < 0 || nx >= W || ny >= H) continue;
            const std::size_t n = static_cast<std::size_t>(ny) * W + nx;
            if (mask.bits[n] && label[n] < 0) {
              label[n] = current;
              stack.emplace_back(nx, ny);
            }
          }
        }
      }
      if (area > best_area) {
        best_area = area;
        best_label = current;
      }
    }
  }
  Mask out{W, H, std::vector<std::uint8_t>(mask.bits.size(), 0)};
  if (best_label < 0) return out;
  for (std::size_t i = 0; i < label.size(); ++i) out.bits[i] = label[i] == best_label ? 1 : 0;
  return out;
}

std::optional<Box> bounding_box(const Mask& mask) {
  Box b{mask.width, mask.height, -1, -1};
  bool any = false;
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (!mask.at(x, y)) continue;
      any = true;
      b.x_min = std::min(b.x_min, x);
      b.y_min = std::min(b.y_min, y);
      b.x_max = std::max(b.x_max, x + 1);
      b.y_max = std::max(b.y_max, y + 1);
    }
  }
  if (!any) return std::nullopt;
  return b;
}

double iou(const Box& a, const Box& b) {
  if (!a.valid() || !b.valid()) throw InvalidArgument("iou requires non-empty boxes");
  const std::int64_t iw = std::max(0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
  const std::int64_t ih = std::max(0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
  const std::int64_t inter = iw * ih;
  const std::int64_t uni = a.area() + b.area() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<double> default_tau_grid() {
  std::vector<double> g(101);
  for (int i = 0; i <= 100; ++i) g[i] = i / 100.0;
  return g;
}

BoxAccuracy max_box_acc(const std::vector<saliency::SaliencyMap>& maps, const std::vector<Box>& gt,
                        double delta_hat, const std::vector<double>& tau_grid, int connectivity) {
  if (maps.size() != gt.size()) throw InvalidArgument("max_box_acc: maps and boxes differ in length");
  if (maps.empty()) throw InvalidArgument("max_box_acc: no samples");
  if (tau_grid.empty()) throw InvalidArgument("max_box_acc: empty tau grid");
  BoxAccuracy acc;
  acc.per_tau.reserve(tau_grid.size());
  acc.score = -1.0;
  for (double tau : tau_grid) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < maps.size(); ++i) {
      auto box = bounding_box(largest_connected_component(threshold_map(maps[i], tau), connectivity));
      if (box && iou(*box, gt[i]) >= delta_hat) ++hits;
    }
    const double frac = static_cast<double>(hits) / static_cast<double>(maps.size());
    acc.per_tau.push_back(frac);
    if (frac > acc.score) {
      acc.score = frac;
      acc.best_tau = tau;
    }
  }
  return acc;
}

double ood_score_maxrank(std::span<const float> x, const std::string& s_plus,
                         const lexdb::Hierarchy& hier, const simcore::DefinitionMatrix& defmat) {
  return simcore::max_rank_sim(x, s_plus, hier, defmat).value();
}

double ood_score_rank(std::span<const float> x, const std::string& s_plus,
                      const simcore::DefinitionMatrix& defmat) {
  return simcore::rank_sim(x, s_plus, defmat).value();
}

double ood_score_imgimg(std::span<const float> x, const std::vector<encoder::Embedding>& train) {
  if (train.empty()) throw InvalidArgument("img-img score needs a non-empty training set");
  double best = -1.0;
  for (const auto& t : train) best = std::max(best, encoder::cosine(t, x));
  return best;
}

double auroc(std::span<const double> pos, std::span<const double> neg) {
  if (pos.empty() || neg.empty()) throw InvalidArgument("auroc needs scores on both sides");
  std::vector<double> sorted(neg.begin(), neg.end());
  std::sort(sorted.begin(), sorted.end());
  // Twice the Mann-Whitney U, so ties stay integral.
  std::uint64_t twice_u = 0;
  for (double p : pos) {
    const auto lo = std::lower_bound(sorted.begin(), sorted.end(), p);
    const auto hi = std::upper_bound(lo, sorted.end(), p);
    twice_u += 2 * static_cast<std::uint64_t>(lo - sorted.begin()) +
               static_cast<std::uint64_t>(hi - lo);
  }
  return static_cast<double>(twice_u) /
         (2.0 * static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

double openness(std::size_t n_plus, std::size_t n_minus) {
  if (n_plus == 0) throw InvalidArgument("openness requires at least one known class");
  const double a = 2.0 * static_cast<double>(n_plus);
  return 1.0 - std::sqrt(a / (a + static_cast<double>(n_minus)));
}

// ---------------------------------------------------------------------------
// OOD protocol

void OODSpec::validate() const {
  std::set<std::string> plus(lambda_plus.begin(), lambda_plus.end());
  std::set<std::string> minus(lambda_minus.begin(), lambda_minus.end());
  if (plus.empty()) throw ValidationError("lambda_plus is empty");
  for (const auto& c : minus) {
    if (plus.contains(c)) throw ValidationError("class " + c + " is in both lambda_plus and lambda_minus");
  }
  std::size_t n_pos = 0, n_neg = 0;
  for (const auto& t : test) {
    if (plus.contains(t.class_id)) {
      ++n_pos;
    } else if (minus.contains(t.class_id)) {
      ++n_neg;
    } else {
      throw ValidationError("test class " + t.class_id + " is in neither class set");
    }
  }
  for (const auto& t : train) {
    if (!plus.contains(t.class_id)) {
      throw ValidationError("training class " + t.class_id + " is not in lambda_plus");
    }
  }
  if (n_pos == 0) throw ValidationError("test set has no in-distribution images");
  if (n_neg == 0) throw ValidationError("test set has no out-of-distribution images");
}

OODSpec parse_ood_spec(const json& doc, const std::filesystem::path& base_dir) {
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  };
  try {
    OODSpec spec;
    spec.s_plus = doc.at("s_plus").get<std::string>();
    spec.s_minus = doc.at("s_minus").get<std::string>();
    spec.lambda_plus = doc.at("lambda_plus").get<std::vector<std::string>>();
    spec.lambda_minus = doc.at("lambda_minus").get<std::vector<std::string>>();
    for (const auto& e : doc.value("train", json::array())) {
      spec.train.push_back({resolve(e.at("path").get<std::string>()), e.at("class").get<std::string>()});
    }
    for (const auto& e : doc.at("test")) {
      spec.test.push_back({resolve(e.at("path").get<std::string>()), e.at("class").get<std::string>()});
    }
    return spec;
  } catch (const json::exception& e) {
    throw ParseError(std::string("OOD spec: ") + e.what());
  }
}

OODSpec load_ood_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFound("cannot open OOD spec: " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return parse_ood_spec(doc, path.parent_path());
}

std::string to_string(OODMethod m) {
  switch (m) {
    case OODMethod::kMaxRank: return "max_rank";
    case OODMethod::kRank: return "rank";
    case OODMethod::kImgImg: return "img_img";
  }
  return "unknown";
}

OODMethod ood_method_from_string(const std::string& s) {
  if (s == "max_rank") return OODMethod::kMaxRank;
  if (s == "rank") return OODMethod::kRank;
  if (s == "img_img") return OODMethod::kImgImg;
  throw InvalidArgument("unknown OOD method: " + s);
}

std::vector<OODMethod> all_ood_methods() {
  return {OODMethod::kImgImg, OODMethod::kRank, OODMethod::kMaxRank};
}

EvalReport run_ood_experiment(const OODSpec& spec, encoder::EncoderBackend& backend,
                              const lexdb::Hierarchy& hier, const simcore::DefinitionMatrix& defmat,
                              const std::vector<OODMethod>& methods) {
  spec.validate();
  hier.index_of(spec.s_plus);
  const std::set<std::string> plus(spec.lambda_plus.begin(), spec.lambda_plus.end());

  auto embed_all = [&](const std::vector<LabeledImage>& items) {
    std::vector<Image> images;
    images.reserve(items.size());
    for (const auto& it : items) images.push_back(load_image(it.path));
    return backend.embed_image_batch(images);
  };
  const auto test_emb = embed_all(spec.test);
  std::vector<encoder::Embedding> train_emb;
  const bool need_train =
      std::find(methods.begin(), methods.end(), OODMethod::kImgImg) != methods.end();
  if (need_train) {
    if (spec.train.empty()) throw ValidationError("img_img method needs a training set");
    train_emb = embed_all(spec.train);
  }

  json aurocs = json::object();
  json scores = json::object();
  for (auto m : methods) {
    std::vector<double> pos, neg;
    for (std::size_t i = 0; i < spec.test.size(); ++i) {
      double s = 0.0;
      switch (m) {
        case OODMethod::kMaxRank: s = ood_score_maxrank(test_emb[i], spec.s_plus, hier, defmat); break;
        case OODMethod::kRank: s = ood_score_rank(test_emb[i], spec.s_plus, defmat); break;
        case OODMethod::kImgImg: s = ood_score_imgimg(test_emb[i], train_emb); break;
      }
      (plus.contains(spec.test[i].class_id) ? pos : neg).push_back(s);
    }
    aurocs[to_string(m)] = auroc(pos, neg);
    scores[to_string(m)] = {{"positive", pos}, {"negative", neg}};
  }

  json distance = nullptr;
  if (hier.contains(spec.s_minus)) {
    try {
      distance = lexdb::semantic_distance(hier, spec.s_plus, spec.s_minus);
    } catch (const ValidationError&) {
      distance = nullptr;
    }
  }
  EvalReport r;
  r.body = {
      {"task", "ood"},
      {"s_plus", spec.s_plus},
      {"s_minus", spec.s_minus},
      {"n_lambda_plus", spec.lambda_plus.size()},
      {"n_lambda_minus", spec.lambda_minus.size()},
      {"openness", openness(spec.lambda_plus.size(), spec.lambda_minus.size())},
      {"semantic_distance", distance},
      {"n_train", spec.train.size()},
      {"n_test_positive", scores.empty() ? 0 : scores.begin()->at("positive").size()},
      {"n_test_negative", scores.empty() ? 0 : scores.begin()->at("negative").size()},
      {"auroc", aurocs},
      {"scores", scores},
      {"config", {{"model_id", backend.model_id()}, {"hierarchy_size", hier.size()},
                  {"hierarchy_hash", hier.content_hash()}}},
  };
  return r;
}

// ---------------------------------------------------------------------------
// WSOL protocol

std::vector<WSOLSample> load_wsol_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFound("cannot open WSOL manifest: " + path.string());
  std::vector<WSOLSample> out;
  try {
    json doc = json::parse(in);
    for (const auto& e : doc) {
      WSOLSample s;
      std::filesystem::path p(e.at("path").get<std::string>());
      s.path = p.is_absolute() ? p : path.parent_path() / p;
      auto b = e.at("box").get<std::vector<int>>();
      if (b.size() != 4) throw ParseError("box must have 4 coordinates");
      s.box = Box{b[0], b[1], b[2], b[3]};
      if (!s.box.valid()) throw ValidationError("degenerate box for " + s.path.string());
      s.concept_id = e.value("concept", std::string());
      out.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return out;
}

EvalReport run_wsol_experiment(const std::vector<WSOLSample>& samples,
                               const std::string& concept_override,
                               const saliency::SaliencyConfig& cfg,
                               encoder::EncoderBackend& backend, const lexdb::Hierarchy& hier,
                               const simcore::DefinitionMatrix& defmat, double delta_hat,
                               saliency::PatchCache* cache) {
  if (samples.empty()) throw InvalidArgument("WSOL manifest is empty");
  std::vector<saliency::SaliencyMap> maps;
  std::vector<Box> boxes;
  for (const auto& s : samples) {
    const std::string& concept_id = concept_override.empty() ? s.concept_id : concept_override;
    if (concept_id.empty()) throw InvalidArgument("no concept for " + s.path.string());
    const Image img = load_image(s.path);
    maps.push_back(saliency::compute_saliency(img, concept_id, cfg, backend, defmat, hier, cache));
    boxes.push_back(s.box);
  }
  const auto tau_grid = default_tau_grid();
  const auto acc = max_box_acc(maps, boxes, delta_hat, tau_grid);
  EvalReport r;
  r.body = {
      {"task", "wsol"},
      {"n_samples", samples.size()},
      {"delta_hat", delta_hat},
      {"max_box_acc", acc.score},
      {"max_box_acc_percent", 100.0 * acc.score},
      {"best_tau", acc.best_tau},
      {"tau_grid", tau_grid},
      {"accuracy_per_tau", acc.per_tau},
      {"config",
       {{"model_id", backend.model_id()},
        {"concept", concept_override},
        {"delta_small", cfg.delta_small},
        {"delta_large", cfg.delta_large},
        {"stride", cfg.stride},
        {"window_mode", saliency::to_string(cfg.window_mode)},
        {"boundary_policy", saliency::to_string(cfg.boundary_policy)}}},
  };
  return r;
}

}  // namespace convis::evalkit
