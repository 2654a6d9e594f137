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

#include "convis/embedding_table.hpp"

#include <atomic>
#include <bit>
#include <cstdlib>
#include <cstring>
#include <random>
#include <thread>

#include "convis/error.hpp"
#include "convis/image.hpp"

namespace convis {

namespace {

class Writer {
 public:
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void bytes(const void* p, std::size_t n) {
    auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw ParseError("embedding table truncated");
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(b_[pos_] | (b_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::span<const std::uint8_t> bytes(std::size_t n) {
    need(n);
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::string str() {
    auto n = u32();
    auto s = bytes(n);
    return std::string(s.begin(), s.end());
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> hex_to_bytes(const std::string& hex) {
  if (hex.size() != 64) throw InvalidArgument("digest must be 64 hex characters");
  std::vector<std::uint8_t> out(32);
  for (std::size_t i = 0; i < 32; ++i) {
    out[i] = static_cast<std::uint8_t>(std::stoi(hex.substr(2 * i, 2), nullptr, 16));
  }
  return out;
}

std::string bytes_to_hex(std::span<const std::uint8_t> b) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (auto x : b) {
    out.push_back(kHex[x >> 4]);
    out.push_back(kHex[x & 0xF]);
  }
  return out;
}

}  // namespace

std::vector<std::uint8_t> encode_table(const EmbeddingTable& t) {
  static_assert(std::endian::native == std::endian::little, "big-endian hosts unsupported");
  if (t.values.size() != t.rows() * t.dimension) {
    throw InvalidArgument("embedding table values do not match rows x dimension");
  }
  Writer w;
  w.bytes("CVDM", 4);
  w.u16(EmbeddingTable::kVersion);
  w.u32(static_cast<std::uint32_t>(t.rows()));
  w.u32(static_cast<std::uint32_t>(t.dimension));
  w.str(t.model_id);
  auto digest = hex_to_bytes(t.digest_hex);
  w.bytes(digest.data(), digest.size());
  for (const auto& id : t.ids) w.str(id);
  w.bytes(t.values.data(), t.values.size() * sizeof(float));
  return w.take();
}

EmbeddingTable decode_table(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  auto magic = r.bytes(4);
  if (std::memcmp(magic.data(), "CVDM", 4) != 0) throw ParseError("not a CVDM file (bad magic)");
  if (auto v = r.u16(); v != EmbeddingTable::kVersion) {
    throw ParseError("unsupported CVDM version " + std::to_string(v));
  }
  EmbeddingTable t;
  const std::uint32_t rows = r.u32();
  t.dimension = r.u32();
  t.model_id = r.str();
  t.digest_hex = bytes_to_hex(r.bytes(32));
  t.ids.reserve(rows);
  for (std::uint32_t i = 0; i < rows; ++i) t.ids.push_back(r.str());
  const std::size_t n = static_cast<std::size_t>(rows) * t.dimension;
  auto raw = r.bytes(n * sizeof(float));
  t.values.resize(n);
  std::memcpy(t.values.data(), raw.data(), raw.size());
  if (!r.done()) throw ParseError("trailing bytes after CVDM payload");
  return t;
}

void write_table_atomic(const EmbeddingTable& table, const std::filesystem::path& path) {
  static std::atomic<unsigned> counter{0};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id())) + "." +
         std::to_string(counter++);
  write_file_bytes(tmp, encode_table(table));
  std::filesystem::rename(tmp, path);
}

EmbeddingTable read_table(const std::filesystem::path& path) {
  auto bytes = read_file_bytes(path);
  try {
    return decode_table(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::filesystem::path default_cache_dir() {
  if (const char* env = std::getenv("CONVIS_CACHE_DIR"); env && *env) return env;
  if (const char* xdg = std::getenv("XDG_CACHE_HOME"); xdg && *xdg) {
    return std::filesystem::path(xdg) / "convis";
  }
  if (const char* home = std::getenv("HOME"); home && *home) {
    return std::filesystem::path(home) / ".cache" / "convis";
  }
  return std::filesystem::temp_directory_path() / "convis-cache";
}

}  // namespace convis
