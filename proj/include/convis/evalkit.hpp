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

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "convis/encoder.hpp"
#include "convis/lexdb.hpp"
#include "convis/saliency.hpp"
#include "convis/simcore.hpp"

namespace convis::evalkit {

// Half-open pixel box [x_min, x_max) x [y_min, y_max).
struct Box {
  int x_min = 0;
  int y_min = 0;
  int x_max = 0;
  int y_max = 0;

  bool valid() const noexcept { return x_min < x_max && y_min < y_max; }
  std::int64_t area() const noexcept {
    return static_cast<std::int64_t>(x_max - x_min) * (y_max - y_min);
  }
  friend bool operator==(const Box&, const Box&) = default;
};

struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;  // row-major, 0 or 1

  bool at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
  std::size_t count() const;
};

// Pixel true iff y > tau. Throws InvalidArgument for tau outside [0, 1].
Mask threshold_map(const saliency::SaliencyMap& map, double tau);

// Keeps the component of maximal area; ties go to the component holding the
// smallest (y, x) pixel in row-major order.
Mask largest_connected_component(const Mask& mask, int connectivity = 8);

std::optional<Box> bounding_box(const Mask& mask);

double iou(const Box& a, const Box& b);

// 101 values 0.00, 0.01, ..., 1.00.
std::vector<double> default_tau_grid();

struct BoxAccuracy {
  double score = 0.0;     // best fraction of samples with IoU >= delta_hat
  double best_tau = 0.0;  // smallest tau attaining it
  std::vector<double> per_tau;
};

// Box from the largest connected component after thresholding; an empty mask
// is a miss at that tau.
BoxAccuracy max_box_acc(const std::vector<saliency::SaliencyMap>& maps, const std::vector<Box>& gt,
                        double delta_hat = 0.5, const std::vector<double>& tau_grid = default_tau_grid(),
                        int connectivity = 8);

double ood_score_maxrank(std::span<const float> x, const std::string& s_plus,
                         const lexdb::Hierarchy& hier, const simcore::DefinitionMatrix& defmat);
double ood_score_rank(std::span<const float> x, const std::string& s_plus,
                      const simcore::DefinitionMatrix& defmat);
// max over the training embeddings of cosine(train, x).
double ood_score_imgimg(std::span<const float> x, const std::vector<encoder::Embedding>& train);

// Mann-Whitney: P(pos > neg) + 0.5 P(pos == neg). O(n log n).
double auroc(std::span<const double> pos, std::span<const double> neg);

// 1 - sqrt(2 n_plus / (2 n_plus + n_minus)).
double openness(std::size_t n_plus, std::size_t n_minus);

struct LabeledImage {
  std::filesystem::path path;
  std::string class_id;
};

struct OODSpec {
  std::string s_plus;
  std::string s_minus;
  std::vector<std::string> lambda_plus;
  std::vector<std::string> lambda_minus;
  std::vector<LabeledImage> train;
  std::vector<LabeledImage> test;  // split into Te+ / Te- by class

  // Disjoint class sets, test labels drawn from them, both test sides present.
  void validate() const;
};

// Relative paths resolve against the experiment file's directory.
OODSpec load_ood_spec(const std::filesystem::path& path);
OODSpec parse_ood_spec(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});

enum class OODMethod { kMaxRank, kRank, kImgImg };
std::string to_string(OODMethod m);
OODMethod ood_method_from_string(const std::string& s);
std::vector<OODMethod> all_ood_methods();

struct EvalReport {
  nlohmann::json body;
};

EvalReport run_ood_experiment(const OODSpec& spec, encoder::EncoderBackend& backend,
                              const lexdb::Hierarchy& hier, const simcore::DefinitionMatrix& defmat,
                              const std::vector<OODMethod>& methods = all_ood_methods());

struct WSOLSample {
  std::filesystem::path path;
  Box box;
  std::string concept_id;
};

std::vector<WSOLSample> load_wsol_manifest(const std::filesystem::path& path);

// Computes a saliency map per sample (concept_override replaces each sample's
// concept when non-empty) and reports MaxBoxAcc.
EvalReport run_wsol_experiment(const std::vector<WSOLSample>& samples,
                               const std::string& concept_override,
                               const saliency::SaliencyConfig& cfg,
                               encoder::EncoderBackend& backend, const lexdb::Hierarchy& hier,
                               const simcore::DefinitionMatrix& defmat, double delta_hat = 0.5,
                               saliency::PatchCache* cache = nullptr);

}  // namespace convis::evalkit
