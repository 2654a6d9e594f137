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

// Python bindings: images cross as numpy uint8 arrays (H, W[, C]), saliency
// maps come back as float64 (H, W).

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <memory>
#include <optional>

#include "convis/error.hpp"
#include "convis/evalkit.hpp"
#include "convis/server.hpp"

namespace py = pybind11;
using namespace pybind11::literals;

namespace {

using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

convis::Image to_image(const U8Array& a) {
  if (a.ndim() != 2 && a.ndim() != 3) throw convis::InvalidArgument("image array must be (H, W) or (H, W, C)");
  const int h = static_cast<int>(a.shape(0));
  const int w = static_cast<int>(a.shape(1));
  const int c = a.ndim() == 3 ? static_cast<int>(a.shape(2)) : 1;
  std::vector<std::uint8_t> px(a.data(), a.data() + a.size());
  return convis::Image(w, h, c, std::move(px));
}

U8Array from_image(const convis::Image& img) {
  std::vector<py::ssize_t> shape{img.height(), img.width()};
  if (img.channels() != 1) shape.push_back(img.channels());
  U8Array out(shape);
  std::copy(img.pixels().begin(), img.pixels().end(), out.mutable_data());
  return out;
}

py::array_t<double> from_map(const convis::saliency::SaliencyMap& m) {
  py::array_t<double> out({m.height, m.width});
  std::copy(m.values.begin(), m.values.end(), out.mutable_data());
  return out;
}

convis::saliency::SaliencyMap to_map(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw convis::InvalidArgument("saliency map must be 2-D");
  convis::saliency::SaliencyMap m;
  m.height = static_cast<int>(a.shape(0));
  m.width = static_cast<int>(a.shape(1));
  m.values.assign(a.data(), a.data() + a.size());
  return m;
}

py::array_t<float> from_embedding(const convis::encoder::Embedding& e) {
  py::array_t<float> out(static_cast<py::ssize_t>(e.size()));
  std::copy(e.begin(), e.end(), out.mutable_data());
  return out;
}

std::vector<float> to_vector(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
  return std::vector<float>(a.data(), a.data() + a.size());
}

convis::evalkit::Box to_box(const std::vector<int>& b) {
  if (b.size() != 4) throw convis::InvalidArgument("box must be [x_min, y_min, x_max, y_max]");
  return {b[0], b[1], b[2], b[3]};
}

// Owns a built pipeline plus a patch cache shared by its saliency calls.
class PyPipeline {
 public:
  explicit PyPipeline(convis::server::Config cfg)
      : cfg_(std::move(cfg)), p_(convis::server::build_pipeline(cfg_)) {}

  py::array_t<double> saliency(const U8Array& image, const std::string& concept_id, std::optional<int> delta_s,
                               std::optional<int> delta_l, std::optional<int> omega,
                               std::optional<std::string> window_mode, std::optional<std::string> boundary_policy) {
    auto c = cfg_.saliency;
    if (delta_s) c.delta_small = *delta_s;
    if (delta_l) c.delta_large = *delta_l;
    if (omega) c.stride = *omega;
    if (window_mode) c.window_mode = convis::saliency::window_mode_from_string(*window_mode);
    if (boundary_policy) c.boundary_policy = convis::saliency::boundary_policy_from_string(*boundary_policy);
    const auto img = to_image(image);
    convis::saliency::SaliencyMap m;
    {
      py::gil_scoped_release release;
      m = convis::saliency::compute_saliency(img, concept_id, c, *p_.backend, *p_.defmat, *p_.hierarchy, &cache_);
    }
    return from_map(m);
  }

  py::array_t<float> embed_image(const U8Array& image) { return from_embedding(p_.backend->embed_image(to_image(image))); }
  py::array_t<float> embed_text(const std::string& text) { return from_embedding(p_.backend->embed_text(text)); }

  std::vector<std::pair<std::string, double>> top_concepts(const U8Array& image, std::size_t k) {
    const auto x = p_.backend->embed_image(to_image(image));
    std::vector<std::pair<std::string, double>> out;
    for (const auto& [id, s] : convis::simcore::top_concepts(x, *p_.defmat, k)) out.emplace_back(id, s.value());
    return out;
  }

  double rank_sim(const py::array_t<float, py::array::c_style | py::array::forcecast>& x, const std::string& s) {
    return convis::simcore::rank_sim(to_vector(x), s, *p_.defmat).value();
  }
  double max_rank_sim(const py::array_t<float, py::array::c_style | py::array::forcecast>& x, const std::string& s) {
    return convis::simcore::max_rank_sim(to_vector(x), s, *p_.hierarchy, *p_.defmat).value();
  }

  py::dict concept_view(const std::string& id) const {
    const auto& s = p_.hierarchy->at(id);
    return py::dict("id"_a = s.id, "lemmas"_a = s.lemmas, "definition"_a = s.definition,
                    "parents"_a = s.hypernym_ids, "children"_a = p_.hierarchy->children_ids(id),
                    "ancestors"_a = convis::lexdb::ancestors(*p_.hierarchy, id));
  }

  std::vector<std::string> search(const std::string& q, std::size_t limit) const {
    return convis::lexdb::search(*p_.hierarchy, q, limit);
  }

  std::size_t hierarchy_size() const { return p_.hierarchy->size(); }
  std::string model_id() const { return p_.backend->model_id(); }
  bool definitions_cache_hit() const { return p_.build_stats.cache_hit; }

 private:
  convis::server::Config cfg_;
  convis::server::Pipeline p_;
  convis::saliency::PatchCache cache_;
};

std::unique_ptr<PyPipeline> make_pipeline(std::optional<std::filesystem::path> config, std::optional<std::filesystem::path> lexicon,
                         std::optional<std::string> backend, std::optional<std::filesystem::path> cache_dir,
                         std::optional<std::filesystem::path> seeds) {
  convis::server::Config cfg;
  if (config) cfg = convis::server::load_config(*config);
  if (lexicon) cfg.lexicon_path = *lexicon;
  if (seeds) cfg.seed_path = *seeds;
  if (backend) cfg.backend = *backend;
  if (cache_dir) cfg.cache_dir = *cache_dir;
  return std::make_unique<PyPipeline>(std::move(cfg));
}

}  // namespace

PYBIND11_MODULE(_convis, m) {
  m.doc() = "convis core bindings";

  auto base = py::register_exception<convis::Error>(m, "ConvisError", PyExc_RuntimeError);
  py::register_exception<convis::NotFound>(m, "NotFoundError", base.ptr());
  py::register_exception<convis::ParseError>(m, "ParseError", base.ptr());
  py::register_exception<convis::ValidationError>(m, "ValidationError", base.ptr());
  py::register_exception<convis::BackendError>(m, "BackendError", base.ptr());
  // Both a ConvisError and a ValueError.
  py::tuple bad_arg_bases = py::make_tuple(base, py::handle(PyExc_ValueError));
  py::register_exception<convis::InvalidArgument>(m, "InvalidArgumentError", bad_arg_bases);
  py::register_exception<convis::Conflict>(m, "ConflictError", base.ptr());

  m.def("load_image", [](const std::filesystem::path& p) { return from_image(convis::load_image(p)); }, "path"_a);
  m.def("save_png", [](const U8Array& a, const std::filesystem::path& p) { convis::save_png(to_image(a), p); },
        "image"_a, "path"_a);
  m.def("image_sha256", [](const U8Array& a) { return convis::image_sha256(to_image(a)); }, "image"_a);

  m.def("read_cvis", [](const std::filesystem::path& p) { return from_map(convis::saliency::read_cvis(p)); }, "path"_a);
  m.def("write_cvis", [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
                         const std::filesystem::path& p) { convis::saliency::write_cvis(to_map(a), p); },
        "saliency"_a, "path"_a);
  m.def("render_overlay",
        [](const U8Array& img, const py::array_t<double, py::array::c_style | py::array::forcecast>& map,
           const std::string& palette) {
          return from_image(convis::saliency::render_overlay(to_image(img), to_map(map), palette));
        },
        "image"_a, "saliency"_a, "palette"_a = "viridis");

  m.def("patch_grid",
        [](int w, int h, int delta_s, int delta_l, int omega, const std::string& policy) {
          convis::saliency::SaliencyConfig c;
          c.delta_small = delta_s;
          c.delta_large = delta_l;
          c.stride = omega;
          c.boundary_policy = convis::saliency::boundary_policy_from_string(policy);
          c.validate();
          std::vector<std::pair<int, int>> out;
          for (const auto& l : convis::saliency::patch_grid(w, h, c)) out.emplace_back(l.x, l.y);
          return out;
        },
        "width"_a, "height"_a, "delta_s"_a = 64, "delta_l"_a = 128, "omega"_a = 16, "boundary_policy"_a = "fit-only");

  m.def("auroc", [](const std::vector<double>& pos, const std::vector<double>& neg) {
    return convis::evalkit::auroc(pos, neg);
  }, "positive"_a, "negative"_a);
  m.def("openness", &convis::evalkit::openness, "n_plus"_a, "n_minus"_a);
  m.def("iou", [](const std::vector<int>& a, const std::vector<int>& b) {
    return convis::evalkit::iou(to_box(a), to_box(b));
  }, "a"_a, "b"_a);
  m.def("max_box_acc",
        [](const std::vector<py::array_t<double, py::array::c_style | py::array::forcecast>>& maps,
           const std::vector<std::vector<int>>& boxes, double delta_hat) {
          std::vector<convis::saliency::SaliencyMap> ms;
          std::vector<convis::evalkit::Box> bs;
          for (const auto& a : maps) ms.push_back(to_map(a));
          for (const auto& b : boxes) bs.push_back(to_box(b));
          const auto r = convis::evalkit::max_box_acc(ms, bs, delta_hat);
          return py::make_tuple(r.score, r.best_tau);
        },
        "maps"_a, "boxes"_a, "delta_hat"_a = 0.5);

  py::class_<PyPipeline>(m, "Pipeline")
      .def(py::init(&make_pipeline), "config"_a = py::none(), "lexicon"_a = py::none(), "backend"_a = py::none(),
           "cache_dir"_a = py::none(), "seeds"_a = py::none())
      .def("saliency", &PyPipeline::saliency, "image"_a, "concept"_a, "delta_s"_a = py::none(),
           "delta_l"_a = py::none(), "omega"_a = py::none(), "window_mode"_a = py::none(),
           "boundary_policy"_a = py::none())
      .def("embed_image", &PyPipeline::embed_image, "image"_a)
      .def("embed_text", &PyPipeline::embed_text, "text"_a)
      .def("top_concepts", &PyPipeline::top_concepts, "image"_a, "k"_a = 10)
      .def("rank_sim", &PyPipeline::rank_sim, "x"_a, "synset"_a)
      .def("max_rank_sim", &PyPipeline::max_rank_sim, "x"_a, "synset"_a)
      .def("concept", &PyPipeline::concept_view, "synset"_a)
      .def("search", &PyPipeline::search, "query"_a, "limit"_a = 20)
      .def_property_readonly("hierarchy_size", &PyPipeline::hierarchy_size)
      .def_property_readonly("model_id", &PyPipeline::model_id)
      .def_property_readonly("definitions_cache_hit", &PyPipeline::definitions_cache_hit);
}
