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
#include <span>
#include <string>
#include <vector>

namespace convis {

// Row-labelled f32 matrix with the on-disk layout used by every embedding
// cache:
//
//   "CVDM"  u16 version  u32 rows  u32 dim  u32 len + model_id bytes
//   32-byte digest
//   rows x (u32 len + id bytes)
//   rows x dim little-endian f32
//
// All integers little-endian.
struct EmbeddingTable {
  static constexpr std::uint16_t kVersion = 1;

  std::vector<std::string> ids;
  std::size_t dimension = 0;
  std::vector<float> values;  // ids.size() * dimension, row-major
  std::string model_id;
  std::string digest_hex;  // 64 hex chars (SHA-256)

  std::size_t rows() const noexcept { return ids.size(); }
  std::span<const float> row(std::size_t i) const {
    return std::span<const float>(values).subspan(i * dimension, dimension);
  }
};

std::vector<std::uint8_t> encode_table(const EmbeddingTable& table);
EmbeddingTable decode_table(std::span<const std::uint8_t> bytes);  // throws ParseError

// Write to a sibling temp file and rename, so readers never see a partial file.
void write_table_atomic(const EmbeddingTable& table, const std::filesystem::path& path);
EmbeddingTable read_table(const std::filesystem::path& path);

// CONVIS_CACHE_DIR if set, else $XDG_CACHE_HOME/convis, else ~/.cache/convis.
std::filesystem::path default_cache_dir();

}  // namespace convis
