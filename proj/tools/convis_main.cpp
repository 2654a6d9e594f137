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

// convis command-line tool. Exit codes: 0 success, 1 usage error, 2 runtime
// failure.

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

#include "convis/error.hpp"
#include "convis/evalkit.hpp"
#include "convis/lexdb.hpp"
#include "convis/saliency.hpp"
#include "convis/server.hpp"
#include "convis/simcore.hpp"

namespace {

using convis::server::Config;

// Flags shared by every pipeline-backed command. Explicit flags override the
// config file.
struct PipelineFlags {
  std::string config;
  std::string lexicon;
  std::string seeds;
  std::string backend;
  std::string cache_dir;
  std::optional<int> delta_s, delta_l, omega;
  std::string window_mode;
  std::string boundary_policy;

  void add_to(CLI::App* app, bool saliency_flags) {
    app->add_option("--config", config, "key = value config file")->check(CLI::ExistingFile);
    app->add_option("--lexicon", lexicon, "lexicon JSONL")->check(CLI::ExistingFile);
    app->add_option("--seeds", seeds, "seed synset list")->check(CLI::ExistingFile);
    app->add_option("--backend", backend, "mock-hash[:D] | fixture-table:<file> | remote-service:<url>");
    app->add_option("--cache-dir", cache_dir, "cache directory");
    if (saliency_flags) {
      app->add_option("--delta-s", delta_s, "small patch size");
      app->add_option("--delta-l", delta_l, "large patch size");
      app->add_option("--omega", omega, "stride");
      app->add_option("--window-mode", window_mode, "containment | symmetric")
          ->check(CLI::IsMember({"containment", "symmetric"}));
      app->add_option("--boundary-policy", boundary_policy, "fit-only | clamp")
          ->check(CLI::IsMember({"fit-only", "clamp"}));
    }
  }

  Config resolve() const {
    Config cfg;
    if (!config.empty()) cfg = convis::server::load_config(config);
    if (!lexicon.empty()) cfg.lexicon_path = lexicon;
    if (!seeds.empty()) cfg.seed_path = seeds;
    if (!backend.empty()) cfg.backend = backend;
    if (!cache_dir.empty()) cfg.cache_dir = cache_dir;
    if (config.empty() && cache_dir.empty()) {
      if (const char* env = std::getenv("CONVIS_CACHE_DIR"); env && *env) cfg.cache_dir = env;
    }
    if (delta_s) cfg.saliency.delta_small = *delta_s;
    if (delta_l) cfg.saliency.delta_large = *delta_l;
    if (omega) cfg.saliency.stride = *omega;
    if (!window_mode.empty()) cfg.saliency.window_mode = convis::saliency::window_mode_from_string(window_mode);
    if (!boundary_policy.empty()) {
      cfg.saliency.boundary_policy = convis::saliency::boundary_policy_from_string(boundary_policy);
    }
    if (cfg.lexicon_path.empty()) throw CLI::RequiredError("--lexicon (or --config with lexicon_path)");
    return cfg;
  }
};

void write_json(const nlohmann::json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw convis::Error("cannot write " + path);
  out << j.dump(2) << "\n";
  if (!out) throw convis::Error("write failed: " + path);
}

std::filesystem::path cvis_path_for(const std::filesystem::path& png) {
  auto p = png;
  p.replace_extension(".cvis");
  return p;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"convis: concept saliency maps over a lexical hierarchy"};
  app.require_subcommand(1);

  // saliency
  PipelineFlags sal_flags;
  std::string sal_image, sal_concept, sal_out, sal_overlay, sal_palette = "viridis";
  auto* sal = app.add_subcommand("saliency", "compute a saliency map for one image and concept");
  sal->add_option("--image", sal_image, "input PNG or JPEG")->required()->check(CLI::ExistingFile);
  sal->add_option("--concept", sal_concept, "synset id")->required();
  sal->add_option("--out", sal_out, "output grayscale PNG; the float map goes next to it as .cvis")->required();
  sal->add_option("--overlay", sal_overlay, "also write a colour overlay PNG here");
  sal->add_option("--palette", sal_palette, "overlay palette");
  sal_flags.add_to(sal, true);

  // precompute-defs
  PipelineFlags pre_flags;
  auto* pre = app.add_subcommand("precompute-defs", "embed and cache the definition matrix");
  pre_flags.add_to(pre, false);

  // wsol-eval
  PipelineFlags wsol_flags;
  std::string wsol_manifest, wsol_concept, wsol_report;
  double wsol_delta_hat = 0.5;
  auto* wsol = app.add_subcommand("wsol-eval", "MaxBoxAcc over a box-annotated manifest");
  wsol->add_option("--manifest", wsol_manifest, "JSON list of {path, box, concept}")->required()->check(CLI::ExistingFile);
  wsol->add_option("--concept", wsol_concept, "synset id used for every sample");
  wsol->add_option("--out-report", wsol_report, "JSON report path")->required();
  wsol->add_option("--delta-hat", wsol_delta_hat, "IoU threshold")->check(CLI::Range(0.0, 1.0));
  wsol_flags.add_to(wsol, true);

  // ood-eval
  PipelineFlags ood_flags;
  std::string ood_spec, ood_report;
  std::vector<std::string> ood_methods;
  auto* ood = app.add_subcommand("ood-eval", "AUROC of the OOD scores for one experiment spec");
  ood->add_option("--spec", ood_spec, "experiment JSON")->required()->check(CLI::ExistingFile);
  ood->add_option("--out-report", ood_report, "JSON report path")->required();
  ood->add_option("--methods", ood_methods, "max_rank, rank, img_img")
      ->delimiter(',')
      ->check(CLI::IsMember({"max_rank", "rank", "img_img"}));
  ood_flags.add_to(ood, false);

  // serve
  std::string serve_config;
  auto* srv = app.add_subcommand("serve", "run the HTTP API");
  srv->add_option("--config", serve_config, "key = value config file")->required()->check(CLI::ExistingFile);

  // hierarchy
  PipelineFlags hier_flags;
  std::string hier_query, hier_id;
  std::size_t hier_limit = 20;
  auto* hier = app.add_subcommand("hierarchy", "inspect the concept hierarchy");
  hier->require_subcommand(1);
  auto* hsearch = hier->add_subcommand("search", "find synsets by id or lemma");
  hsearch->add_option("query", hier_query, "search text")->required();
  hsearch->add_option("--limit", hier_limit, "maximum results")->check(CLI::PositiveNumber);
  hier_flags.add_to(hsearch, false);
  PipelineFlags show_flags;
  auto* hshow = hier->add_subcommand("show", "print one synset with children and ancestors");
  hshow->add_option("id", hier_id, "synset id")->required();
  show_flags.add_to(hshow, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << "\n" << app.help();
    return 1;
  }

  try {
    if (*sal) {
      const Config cfg = sal_flags.resolve();
      auto p = convis::server::build_pipeline(cfg);
      const auto img = convis::load_image(sal_image);
      const auto map = convis::saliency::compute_saliency(img, sal_concept, cfg.saliency, *p.backend,
                                                          *p.defmat, *p.hierarchy);
      convis::save_png(convis::saliency::to_gray_image(map), sal_out);
      convis::saliency::write_cvis(map, cvis_path_for(sal_out));
      if (!sal_overlay.empty()) {
        convis::save_png(convis::saliency::render_overlay(img, map, sal_palette), sal_overlay);
      }
      std::cout << sal_out << "\n" << cvis_path_for(sal_out).string() << "\n";
    } else if (*pre) {
      const Config cfg = pre_flags.resolve();
      auto p = convis::server::build_pipeline(cfg);
      std::cout << nlohmann::json{{"cache_file", p.build_stats.cache_file.string()},
                                  {"cache_hit", p.build_stats.cache_hit},
                                  {"text_calls", p.build_stats.text_calls},
                                  {"synsets", p.hierarchy->size()},
                                  {"model_id", p.backend->model_id()}}
                       .dump(2)
                << "\n";
    } else if (*wsol) {
      const Config cfg = wsol_flags.resolve();
      auto p = convis::server::build_pipeline(cfg);
      const auto samples = convis::evalkit::load_wsol_manifest(wsol_manifest);
      auto report = convis::evalkit::run_wsol_experiment(samples, wsol_concept, cfg.saliency, *p.backend,
                                                         *p.hierarchy, *p.defmat, wsol_delta_hat);
      write_json(report.body, wsol_report);
      std::cout << "MaxBoxAcc " << report.body["max_box_acc_percent"].get<double>() << "\n";
    } else if (*ood) {
      const Config cfg = ood_flags.resolve();
      auto p = convis::server::build_pipeline(cfg);
      std::vector<convis::evalkit::OODMethod> methods;
      for (const auto& m : ood_methods) methods.push_back(convis::evalkit::ood_method_from_string(m));
      if (methods.empty()) methods = convis::evalkit::all_ood_methods();
      const auto spec = convis::evalkit::load_ood_spec(ood_spec);
      auto report = convis::evalkit::run_ood_experiment(spec, *p.backend, *p.hierarchy, *p.defmat, methods);
      write_json(report.body, ood_report);
      std::cout << report.body["auroc"].dump() << "\n";
    } else if (*srv) {
      auto cfg = convis::server::load_config(serve_config);
      convis::server::Service service(cfg);
      std::cerr << "convis: listening on " << cfg.host << ":" << cfg.port << " ("
                << service.hierarchy().size() << " synsets, " << service.backend().model_id() << ")\n";
      convis::server::serve(service);
    } else if (*hsearch) {
      const Config cfg = hier_flags.resolve();
      const auto lex = convis::lexdb::load_lexicon(cfg.lexicon_path);
      const auto h = cfg.seed_path.empty()
                         ? convis::lexdb::Hierarchy(lex)
                         : convis::lexdb::filter_hierarchy(lex, convis::lexdb::load_seed_list(cfg.seed_path));
      for (const auto& id : convis::lexdb::search(h, hier_query, hier_limit)) {
        std::cout << id << "\t" << h.at(id).definition << "\n";
      }
    } else if (*hshow) {
      const Config cfg = show_flags.resolve();
      const auto lex = convis::lexdb::load_lexicon(cfg.lexicon_path);
      const auto h = cfg.seed_path.empty()
                         ? convis::lexdb::Hierarchy(lex)
                         : convis::lexdb::filter_hierarchy(lex, convis::lexdb::load_seed_list(cfg.seed_path));
      const auto& s = h.at(hier_id);
      std::cout << nlohmann::json{{"id", s.id},
                                  {"lemmas", s.lemmas},
                                  {"definition", s.definition},
                                  {"children", h.children_ids(hier_id)},
                                  {"ancestors", convis::lexdb::ancestors(h, hier_id)}}
                       .dump(2)
                << "\n";
    }
  } catch (const CLI::RequiredError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "convis: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
