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

#include <netinet/in.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "convis/image.hpp"
#include "convis/saliency.hpp"

namespace {

using json = nlohmann::json;

const std::filesystem::path kData = CONVIS_TEST_DATA;
const std::filesystem::path kCli = CONVIS_CLI;

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path workdir() {
  const char* env = std::getenv("CONVIS_CACHE_DIR");
  auto d = (env && *env ? std::filesystem::path(env) : std::filesystem::temp_directory_path()) / "cli-work";
  std::filesystem::create_directories(d);
  return d;
}

Run run(const std::string& args) {
  const auto dir = workdir();
  static int counter = 0;
  const std::string tag = std::to_string(getpid()) + "-" + std::to_string(counter++);
  const auto out = dir / ("stdout-" + tag + ".txt");
  const auto err = dir / ("stderr-" + tag + ".txt");
  const std::string cmd = kCli.string() + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

const std::string kGolden = "--config " + q(kData / "golden.conf");

TEST(Cli, NoSubcommandIsUsageError) {
  const auto r = run("");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("Usage"), std::string::npos) << r.err;
}

TEST(Cli, MissingImageNamesTheFlag) {
  const auto r = run("saliency --concept dog.n.01 --out x.png " + kGolden);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("--image"), std::string::npos) << r.err;
}

TEST(Cli, MissingLexiconIsUsageError) {
  const auto r = run("hierarchy show dog.n.01");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("--lexicon"), std::string::npos) << r.err;
}

TEST(Cli, NonexistentConfigIsUsageError) {
  EXPECT_EQ(run("precompute-defs --config /no/such/file.conf").code, 1);
}

TEST(Cli, SaliencyReproducesGoldenFile) {
  const auto dir = workdir() / "sal";
  std::filesystem::create_directories(dir);
  const auto png = dir / "dog.png";
  const auto overlay = dir / "dog_overlay.png";
  const auto r = run("saliency --image " + q(kData / "golden_48.png") + " --concept dog.n.01 --out " + q(png) +
                     " --overlay " + q(overlay) + " " + kGolden);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto cvis = dir / "dog.cvis";
  ASSERT_TRUE(std::filesystem::exists(cvis));
  EXPECT_EQ(slurp(cvis), slurp(kData / "golden_48_dog.cvis"));
  const auto gray = convis::load_image(png);
  EXPECT_EQ(gray.channels(), 1);
  EXPECT_EQ(gray.width(), 48);
  const auto ov = convis::load_image(overlay);
  EXPECT_EQ(ov.channels(), 3);
  EXPECT_EQ(ov.height(), 48);
}

TEST(Cli, FlagsOverrideConfig) {
  const auto dir = workdir() / "sal2";
  std::filesystem::create_directories(dir);
  const auto r = run("saliency --image " + q(kData / "golden_48.png") + " --concept dog.n.01 --out " +
                     q(dir / "a.png") + " --omega 4 --window-mode symmetric " + kGolden);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(slurp(dir / "a.cvis"), slurp(kData / "golden_48_dog.cvis"));
  EXPECT_EQ(run("saliency --image " + q(kData / "golden_48.png") + " --concept dog.n.01 --out " +
                q(dir / "b.png") + " --window-mode diagonal " + kGolden)
                .code,
            1);
}

TEST(Cli, RuntimeFailureExitsTwo) {
  const auto dir = workdir();
  const auto r = run("saliency --image " + q(kData / "golden_48.png") + " --concept unicorn.n.01 --out " +
                     q(dir / "u.png") + " " + kGolden);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("unicorn.n.01"), std::string::npos) << r.err;
  EXPECT_FALSE(std::filesystem::exists(dir / "u.png"));
}

TEST(Cli, PrecomputeDefsHitsCacheSecondTime) {
  const auto cache = workdir() / "defs-cache";
  std::filesystem::remove_all(cache);
  const std::string args = "precompute-defs --lexicon " + q(kData / "fixture_lexicon.jsonl") +
                           " --backend mock-hash:16 --cache-dir " + q(cache);
  const auto a = run(args);
  ASSERT_EQ(a.code, 0) << a.err;
  const auto ja = json::parse(a.out);
  EXPECT_FALSE(ja["cache_hit"].get<bool>());
  EXPECT_EQ(ja["text_calls"], 26);
  const auto jb = json::parse(run(args).out);
  EXPECT_TRUE(jb["cache_hit"].get<bool>());
  EXPECT_EQ(jb["text_calls"], 0);
  EXPECT_EQ(jb["synsets"], 26);
}

TEST(Cli, OodEvalWritesReport) {
  const auto report = workdir() / "ood.json";
  const auto r = run("ood-eval --spec " + q(kData / "ood" / "spec.json") + " --out-report " + q(report) +
                     " --lexicon " + q(kData / "fixture_lexicon.jsonl") + " --backend mock-hash:32");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = json::parse(slurp(report));
  for (const char* m : {"max_rank", "rank", "img_img"}) {
    ASSERT_TRUE(j["auroc"].contains(m));
    EXPECT_GE(j["auroc"][m].get<double>(), 0.0);
    EXPECT_LE(j["auroc"][m].get<double>(), 1.0);
  }
  EXPECT_NEAR(j["openness"].get<double>(), 1 - std::sqrt(4.0 / 5.0), 1e-12);
  const auto only = run("ood-eval --spec " + q(kData / "ood" / "spec.json") + " --out-report " + q(report) +
                        " --methods rank,max_rank --lexicon " + q(kData / "fixture_lexicon.jsonl"));
  ASSERT_EQ(only.code, 0) << only.err;
  EXPECT_FALSE(json::parse(slurp(report))["auroc"].contains("img_img"));
  EXPECT_EQ(run("ood-eval --spec " + q(kData / "ood" / "spec.json") + " --out-report " + q(report) +
                " --methods energy --lexicon " + q(kData / "fixture_lexicon.jsonl"))
                .code,
            1);
}

TEST(Cli, WsolEvalWritesReport) {
  const auto report = workdir() / "wsol.json";
  const auto r = run("wsol-eval --manifest " + q(kData / "wsol" / "manifest.json") + " --out-report " +
                     q(report) + " --concept animal.n.01 --delta-s 8 --delta-l 16 --omega 4 " + kGolden);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = json::parse(slurp(report));
  EXPECT_EQ(j["n_samples"], 4);
  EXPECT_EQ(j["config"]["concept"], "animal.n.01");
  EXPECT_GE(j["max_box_acc"].get<double>(), 0.0);
  EXPECT_LE(j["max_box_acc"].get<double>(), 1.0);
  EXPECT_EQ(run("wsol-eval --manifest " + q(kData / "wsol" / "manifest.json") + " --out-report " + q(report) +
                " --delta-hat 1.5 " + kGolden)
                .code,
            1);
}

TEST(Cli, HierarchyShowAndSearch) {
  const auto show = run("hierarchy show dog.n.01 " + kGolden);
  ASSERT_EQ(show.code, 0) << show.err;
  const auto j = json::parse(show.out);
  EXPECT_EQ(j["children"], json::array({"puppy.n.01"}));
  const auto anc = j["ancestors"].get<std::vector<std::string>>();
  EXPECT_NE(std::find(anc.begin(), anc.end(), "domestic_animal.n.01"), anc.end());
  const auto search = run("hierarchy search mug --limit 3 " + kGolden);
  ASSERT_EQ(search.code, 0) << search.err;
  EXPECT_EQ(search.out.rfind("coffee_mug.n.01\t", 0), 0u) << search.out;
  EXPECT_EQ(run("hierarchy show nope.n.01 " + kGolden).code, 2);
}

TEST(Cli, ServeReportsBusyPort) {
  const int fd = socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in a{};
  a.sin_family = AF_INET;
  a.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  ASSERT_EQ(bind(fd, reinterpret_cast<sockaddr*>(&a), sizeof a), 0);
  ASSERT_EQ(listen(fd, 1), 0);
  socklen_t len = sizeof a;
  getsockname(fd, reinterpret_cast<sockaddr*>(&a), &len);
  const auto conf = workdir() / "busy.conf";
  std::ofstream(conf) << "lexicon_path = " << (kData / "fixture_lexicon.jsonl").string() << "\n"
                      << "port = " << ntohs(a.sin_port) << "\n";
  const auto r = run("serve --config " + q(conf));
  close(fd);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("port busy"), std::string::npos) << r.err;
}

}  // namespace
