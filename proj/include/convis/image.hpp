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

struct Rect {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;

  bool contains(int px, int py) const noexcept {
    return px >= x && px < x + width && py >= y && py < y + height;
  }
  friend bool operator==(const Rect&, const Rect&) = default;
};

// 8-bit interleaved image, row-major, 1 or 3 channels.
class Image {
 public:
  Image() = default;
  // Zero-filled image. Throws InvalidArgument on zero area or bad channels.
  Image(int width, int height, int channels);
  Image(int width, int height, int channels, std::vector<std::uint8_t> pixels);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int channels() const noexcept { return channels_; }
  bool empty() const noexcept { return pixels_.empty(); }

  std::span<const std::uint8_t> pixels() const noexcept { return pixels_; }
  std::span<std::uint8_t> pixels() noexcept { return pixels_; }

  std::uint8_t at(int x, int y, int c) const noexcept {
    return pixels_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }
  std::uint8_t& at(int x, int y, int c) noexcept {
    return pixels_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }

  // Copy of the sub-rectangle; the rectangle must lie inside the image.
  Image crop(const Rect& r) const;

  friend bool operator==(const Image&, const Image&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<std::uint8_t> pixels_;
};

// Bilinear resampling with half-pixel centers (align_corners = false).
Image resize_bilinear(const Image& src, int width, int height);

Image to_rgb(const Image& src);

// SHA-256 hex of (u32le width, u32le height, u8 channels, pixel bytes).
// This is the canonical content hash for decoded images.
std::string image_sha256(const Image& img);

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(const std::string& bytes);

// PNG or JPEG, sniffed from the magic bytes. Throws ParseError.
Image decode_image(std::span<const std::uint8_t> bytes);
Image load_image(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_png(const Image& img);
void save_png(const Image& img, const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace convis
