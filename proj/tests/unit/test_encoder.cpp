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
#include <httplib.h>

#include <cmath>
#include <nlohmann/json.hpp>
#include <thread>

#include "convis/encoder.hpp"
#include "convis/error.hpp"
#include "oracles.hpp"

namespace convis::encoder {
namespace {

TEST(Hashing, Fnv1aKnownVectors) {
  EXPECT_EQ(fnv1a64({}), 0xcbf29ce484222325ULL);
  const std::uint8_t a[] = {'a'};
  EXPECT_EQ(fnv1a64(a), 0xaf63dc4c8601ec8cULL);
  const std::uint8_t foobar[] = {'f', 'o', 'o', 'b', 'a', 'r'};
  EXPECT_EQ(fnv1a64(foobar), 0x85944171f73967e8ULL);
}

TEST(Hashing, SplitMix64KnownStream) {
  SplitMix64 r(0);
  EXPECT_EQ(r.next(), 0xe220a8397b1dcdafULL);
  EXPECT_EQ(r.next(), 0x6e789e6aa1b965f4ULL);
  EXPECT_EQ(r.next(), 0x06c45d188009454fULL);
}

TEST(Hashing, UniformStaysInsideOpenInterval) {
  SplitMix64 r(42);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(MockHash, DeterministicUnitVectors) {
  MockHashBackend m(64);
  const auto a = m.embed_text("a dog");
  EXPECT_EQ(a.size(), 64u);
  EXPECT_NEAR(norm(a), 1.0, 1e-6);
  EXPECT_EQ(a, MockHashBackend(64).embed_text("a dog"));
  EXPECT_NE(a, m.embed_text("a cat"));
  EXPECT_EQ(m.model_id(), "mock-hash/d64");
}

TEST(MockHash, TextAndImageDomainsDiffer) {
  MockHashBackend m(16);
  Image img(1, 1, 1, {'a'});
  EXPECT_NE(m.embed_text("a"), m.embed_image(img));
}

TEST(MockHash, ImageHashCoversShape) {
  MockHashBackend m(16);
  EXPECT_NE(m.embed_image(Image(2, 1, 1)), m.embed_image(Image(1, 2, 1)));
  EXPECT_NE(m.embed_image(Image(1, 1, 1)), m.embed_image(Image(1, 1, 3)));
}

TEST(MockHash, ResizesWhenResolutionSet) {
  MockHashBackend m(16, 8);
  Image small(4, 4, 3);
  for (auto& p : small.pixels()) p = 9;
  Image big(8, 8, 3);
  for (auto& p : big.pixels()) p = 9;
  EXPECT_EQ(m.embed_image(small), m.embed_image(big));
}

TEST(MockHash, RejectsBadInput) {
  MockHashBackend m(8);
  EXPECT_THROW(m.embed_text(""), InvalidArgument);
  EXPECT_THROW(m.embed_text(std::string(MockHashBackend::kMaxTextBytes + 1, 'x')), InvalidArgument);
  EXPECT_THROW(MockHashBackend(0), InvalidArgument);
}

TEST(MockHash, BatchWrapsItemIndex) {
  MockHashBackend m(8);
  try {
    m.embed_text_batch({"ok", ""});
    FAIL();
  } catch (const BackendError& e) {
    EXPECT_NE(std::string(e.what()).find("item 1"), std::string::npos);
  }
}

TEST(Cosine, BasicProperties) {
  const Embedding a{1, 0}, b{0, 1}, c{2, 0};
  EXPECT_DOUBLE_EQ(cosine(a, b), 0.0);
  EXPECT_DOUBLE_EQ(cosine(a, c), 1.0);
  EXPECT_THROW(cosine(a, Embedding{1, 0, 0}), InvalidArgument);
  EXPECT_THROW(cosine(a, Embedding{0, 0}), InvalidArgument);
  oracle::Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const auto x = oracle::random_vector(rng, 33);
    const auto y = oracle::random_vector(rng, 33);
    const double v = cosine(x, y);
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
    EXPECT_DOUBLE_EQ(v, cosine(y, x));
  }
}

TEST(FixtureTable, LookupAndMiss) {
  auto b = FixtureTableBackend::parse(
      R"({"dimension": 2, "text": {"hello": [3, 4]}, "image_sha256": {}})");
  const auto v = b.embed_text("hello");
  EXPECT_FLOAT_EQ(v[0], 0.6f);
  EXPECT_FLOAT_EQ(v[1], 0.8f);
  EXPECT_THROW(b.embed_text("other"), BackendError);
  Image img(2, 2, 1);
  EXPECT_THROW(b.embed_image(img), BackendError);
  b.add_image(img, {1, 0});
  EXPECT_EQ(b.embed_image(img), (Embedding{1, 0}));
  EXPECT_THROW(b.add_text("bad", {1, 2, 3}), ValidationError);
  EXPECT_THROW(FixtureTableBackend::parse("{"), ParseError);
}

TEST(BackendSpec, Parsing) {
  auto s = parse_backend_spec("mock-hash:32");
  EXPECT_EQ(s.kind, BackendKind::kMockHash);
  EXPECT_EQ(s.dimension, 32u);
  EXPECT_EQ(parse_backend_spec("mock").dimension, 0u);
  EXPECT_EQ(parse_backend_spec("fixture-table:/tmp/x.json").model_path, "/tmp/x.json");
  EXPECT_EQ(parse_backend_spec("remote-service:http://127.0.0.1:9").url, "http://127.0.0.1:9");
  EXPECT_THROW(parse_backend_spec("nope"), InvalidArgument);
  EXPECT_THROW(parse_backend_spec("mock-hash:abc"), InvalidArgument);
  EXPECT_THROW(parse_backend_spec("remote-service"), InvalidArgument);
  EXPECT_EQ(make_backend(parse_backend_spec("mock-hash"))->dimension(), 512u);
  EXPECT_THROW(make_backend(parse_backend_spec("runtime-model:/nowhere.onnx")), BackendError);
}

TEST(Instrumented, CountsEveryItem) {
  auto inner = std::make_shared<MockHashBackend>(8);
  InstrumentedBackend b(inner);
  b.embed_text("a");
  b.embed_text_batch({"b", "c"});
  b.embed_image(Image(1, 1, 1));
  b.embed_image_batch({Image(1, 1, 1), Image(2, 1, 1), Image(1, 2, 1)});
  EXPECT_EQ(b.text_calls(), 3u);
  EXPECT_EQ(b.image_calls(), 4u);
  b.reset();
  EXPECT_EQ(b.text_calls(), 0u);
}

// In-process stand-in for the embedding service: answers with the mock
// backend's vectors scaled by 3 so normalisation is observable.
class FakeService {
 public:
  FakeService() {
    svr_.Post("/embed/text", [this](const httplib::Request& req, httplib::Response& res) {
      ++requests;
      auto body = nlohmann::json::parse(req.body);
      nlohmann::json out = {{"vectors", nlohmann::json::array()}};
      for (const auto& t : body["texts"]) out["vectors"].push_back(scaled(mock_.embed_text(t)));
      res.set_content(out.dump(), "application/json");
    });
    svr_.Post("/embed/image", [this](const httplib::Request& req, httplib::Response& res) {
      ++requests;
      auto body = nlohmann::json::parse(req.body);
      nlohmann::json out = {{"vectors", nlohmann::json::array()}};
      for (std::size_t i = 0; i < body["images_b64"].size(); ++i) {
        out["vectors"].push_back(scaled(mock_.embed_text("image " + std::to_string(i))));
      }
      res.set_content(out.dump(), "application/json");
    });
    port_ = svr_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { svr_.listen_after_bind(); });
    svr_.wait_until_ready();
  }
  ~FakeService() {
    svr_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  std::atomic<int> requests{0};

 private:
  static std::vector<float> scaled(Embedding v) {
    for (auto& x : v) x *= 3.0f;
    return v;
  }
  MockHashBackend mock_{24};
  httplib::Server svr_;
  int port_ = 0;
  std::thread thread_;
};

TEST(Remote, SpeaksJsonProtocolAndNormalises) {
  FakeService svc;
  RemoteServiceBackend::Options o;
  o.url = svc.url();
  o.max_batch = 2;
  RemoteServiceBackend b(o);
  EXPECT_EQ(b.dimension(), 24u);  // learned from the first response
  const auto v = b.embed_text_batch({"x", "y", "z"});
  ASSERT_EQ(v.size(), 3u);
  for (const auto& e : v) EXPECT_NEAR(norm(e), 1.0, 1e-6);
  const auto expect = MockHashBackend(24).embed_text("y");
  EXPECT_NEAR(cosine(v[1], expect), 1.0, 1e-6);
  const int before = svc.requests.load();
  b.embed_image_batch({Image(3, 3, 3), Image(3, 3, 3), Image(3, 3, 3)});
  EXPECT_EQ(svc.requests.load() - before, 2);  // batches of two
}

TEST(Remote, UnreachableIsBackendError) {
  RemoteServiceBackend::Options o;
  o.url = "http://127.0.0.1:1";
  o.timeout_seconds = 2;
  RemoteServiceBackend b(o);
  EXPECT_THROW(b.embed_text("x"), BackendError);
}

}  // namespace
}  // namespace convis::encoder
