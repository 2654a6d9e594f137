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

#include "convis/image.hpp"

#include <jpeglib.h>
#include <openssl/sha.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <iterator>

#include "convis/error.hpp"

namespace convis {

Image::Image(int width, int height, int channels)
    : Image(width, height, channels,
            std::vector<std::uint8_t>(static_cast<std::size_t>(std::max(width, 0)) *
                                      std::max(height, 0) * std::max(channels, 0))) {}

Image::Image(int width, int height, int channels, std::vector<std::uint8_t> pixels)
    : width_(width), height_(height), channels_(channels), pixels_(std::move(pixels)) {
  if (width < 1 || height < 1) {
    throw InvalidArgument("image must have positive area, got " + std::to_string(width) + "x" +
                          std::to_string(height));
  }
  if (channels != 1 && channels != 3) {
    throw InvalidArgument("image must have 1 or 3 channels, got " + std::to_string(channels));
  }
  if (pixels_.size() != static_cast<std::size_t>(width) * height * channels) {
    throw InvalidArgument("pixel buffer size does not match image dimensions");
  }
}

Image Image::crop(const Rect& r) const {
  if (r.width < 1 || r.height < 1 || r.x < 0 || r.y < 0 || r.x + r.width > width_ ||
      r.y + r.height > height_) {
    throw InvalidArgument("crop rectangle outside image");
  }
  std::vector<std::uint8_t> out(static_cast<std::size_t>(r.width) * r.height * channels_);
  const std::size_t row_bytes = static_cast<std::size_t>(r.width) * channels_;
  for (int y = 0; y < r.height; ++y) {
    const auto* src = &pixels_[(static_cast<std::size_t>(r.y + y) * width_ + r.x) * channels_];
    std::copy_n(src, row_bytes, &out[static_cast<std::size_t>(y) * row_bytes]);
  }
  return Image(r.width, r.height, channels_, std::move(out));
}

Image resize_bilinear(const Image& src, int width, int height) {
  if (width == src.width() && height == src.height()) return src;
  Image dst(width, height, src.channels());
  const double sx = static_cast<double>(src.width()) / width;
  const double sy = static_cast<double>(src.height()) / height;
  for (int y = 0; y < height; ++y) {
    double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height() - 1));
    int y0 = static_cast<int>(fy);
    int y1 = std::min(y0 + 1, src.height() - 1);
    double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width() - 1));
      int x0 = static_cast<int>(fx);
      int x1 = std::min(x0 + 1, src.width() - 1);
      double wx = fx - x0;
      for (int c = 0; c < src.channels(); ++c) {
        double top = src.at(x0, y0, c) * (1.0 - wx) + src.at(x1, y0, c) * wx;
        double bot = src.at(x0, y1, c) * (1.0 - wx) + src.at(x1, y1, c) * wx;
        double v = top * (1.0 - wy) + bot * wy;
        dst.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
      }
    }
  }
  return dst;
}

Image to_rgb(const Image& src) {
  if (src.channels() == 3) return src;
  Image out(src.width(), src.height(), 3);
  auto in = src.pixels();
  auto px = out.pixels();
  for (std::size_t i = 0; i < in.size(); ++i) {
    px[3 * i] = px[3 * i + 1] = px[3 * i + 2] = in[i];
  }
  return out;
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[SHA256_DIGEST_LENGTH];
  SHA256(bytes.data(), bytes.size(), digest);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * SHA256_DIGEST_LENGTH);
  for (unsigned char b : digest) {
    out.push_back(kHex[b >> 4]);
    out.push_back(kHex[b & 0xF]);
  }
  return out;
}

std::string sha256_hex(const std::string& bytes) {
  return sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
}

std::string image_sha256(const Image& img) {
  std::vector<std::uint8_t> buf;
  buf.reserve(9 + img.pixels().size());
  auto put_u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  put_u32(static_cast<std::uint32_t>(img.width()));
  put_u32(static_cast<std::uint32_t>(img.height()));
  buf.push_back(static_cast<std::uint8_t>(img.channels()));
  buf.insert(buf.end(), img.pixels().begin(), img.pixels().end());
  return sha256_hex(buf);
}

namespace {

Image decode_png(std::span<const std::uint8_t> bytes) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
    throw ParseError(std::string("invalid PNG: ") + png.message);
  }
  const bool gray = (png.format & PNG_FORMAT_FLAG_COLOR) == 0;
  png.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  const int channels = gray ? 1 : 3;
  if (png.width == 0 || png.height == 0) {
    png_image_free(&png);
    throw ParseError("PNG has zero area");
  }
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, pixels.data(), 0, nullptr)) {
    std::string msg = png.message;
    png_image_free(&png);
    throw ParseError("invalid PNG: " + msg);
  }
  return Image(static_cast<int>(png.width), static_cast<int>(png.height), channels,
               std::move(pixels));
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

Image decode_jpeg(std::span<const std::uint8_t> bytes) {
  jpeg_decompress_struct cinfo{};
  JpegErrorManager jerr{};
  cinfo.err = jpeg_std_error(&jerr.base);
  jerr.base.error_exit = jpeg_error_exit;
  std::vector<std::uint8_t> pixels;
  int width = 0, height = 0, channels = 0;
  if (setjmp(jerr.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw ParseError(std::string("invalid JPEG: ") + jerr.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = cinfo.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_start_decompress(&cinfo);
  width = static_cast<int>(cinfo.output_width);
  height = static_cast<int>(cinfo.output_height);
  channels = cinfo.output_components;
  pixels.resize(static_cast<std::size_t>(width) * height * channels);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = &pixels[static_cast<std::size_t>(cinfo.output_scanline) * width * channels];
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return Image(width, height, channels, std::move(pixels));
}

}  // namespace

Image decode_image(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t kPng[] = {0x89, 'P', 'N', 'G'};
  if (bytes.size() >= 4 && std::equal(std::begin(kPng), std::end(kPng), bytes.begin())) {
    return decode_png(bytes);
  }
  if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) {
    return decode_jpeg(bytes);
  }
  if (bytes.empty()) throw ParseError("empty image payload");
  throw ParseError("unrecognized image format (expected PNG or JPEG)");
}

Image load_image(const std::filesystem::path& path) {
  auto bytes = read_file_bytes(path);
  try {
    return decode_image(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_png(const Image& img) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width());
  png.height = static_cast<png_uint_32>(img.height());
  png.format = img.channels() == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png, nullptr, &size, 0, img.pixels().data(), 0, nullptr)) {
    throw Error(std::string("PNG encode failed: ") + png.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&png, out.data(), &size, 0, img.pixels().data(), 0, nullptr)) {
    throw Error(std::string("PNG encode failed: ") + png.message);
  }
  out.resize(size);
  return out;
}

void save_png(const Image& img, const std::filesystem::path& path) {
  write_file_bytes(path, encode_png(img));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("cannot open file: " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write file: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed: " + path.string());
}

}  // namespace convis
