/* Copyright 2026 The dishwx Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

// PNG/JPEG codecs over libpng's simplified API and libjpeg.

#include <jpeglib.h>
#include <png.h>

#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <string>
#include <vector>

#include "dishwx/error.hpp"
#include "dishwx/image.hpp"

namespace dishwx {

namespace detail {

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::UnreadableFile, "cannot open " + path);
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline bool is_png(const std::vector<std::uint8_t>& b) {
  static constexpr std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  return b.size() >= 8 && std::memcmp(b.data(), sig, 8) == 0;
}
inline bool is_jpeg(const std::vector<std::uint8_t>& b) {
  return b.size() >= 3 && b[0] == 0xff && b[1] == 0xd8 && b[2] == 0xff;
}

struct PngImage {
  png_image img;
  PngImage() {
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
  }
  ~PngImage() { png_image_free(&img); }
  PngImage(const PngImage&) = delete;
  PngImage& operator=(const PngImage&) = delete;
};

// Decodes PNG bytes into the requested simplified-API format.
inline std::vector<std::uint8_t> decode_png(const std::vector<std::uint8_t>& bytes, const std::string& path,
                                            png_uint_32 format, png_uint_32& width, png_uint_32& height,
                                            png_uint_32* native_format = nullptr) {
  PngImage p;
  if (!png_image_begin_read_from_memory(&p.img, bytes.data(), bytes.size()))
    throw Error(ErrorCode::UnreadableFile, path + ": " + p.img.message);
  if (native_format) *native_format = p.img.format;
  p.img.format = format;
  std::vector<std::uint8_t> out(PNG_IMAGE_SIZE(p.img));
  if (!png_image_finish_read(&p.img, nullptr, out.data(), 0, nullptr))
    throw Error(ErrorCode::UnreadableFile, path + ": " + p.img.message);
  width = p.img.width;
  height = p.img.height;
  return out;
}

struct JpegErrorManager {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}
// Swallows messages but still counts warnings (level -1), as the default does.
inline void jpeg_silent(j_common_ptr cinfo, int level) {
  if (level < 0) ++cinfo->err->num_warnings;
}

inline Image decode_jpeg(const std::vector<std::uint8_t>& bytes, const std::string& path) {
  jpeg_decompress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = jpeg_error_exit;
  err.pub.emit_message = jpeg_silent;
  std::vector<std::uint8_t> data;
  int w = 0, h = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw Error(ErrorCode::UnreadableFile, path + ": " + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  w = static_cast<int>(cinfo.output_width);
  h = static_cast<int>(cinfo.output_height);
  data.resize(static_cast<std::size_t>(w) * h * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = data.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  const long warnings = err.pub.num_warnings;
  jpeg_destroy_decompress(&cinfo);
  // libjpeg pads truncated streams with gray and only warns.
  if (warnings > 0) throw Error(ErrorCode::UnreadableFile, path + ": corrupt or truncated JPEG data");
  return Image(w, h, 3, std::move(data));
}

}  // namespace detail

/// Decodes a PNG or JPEG file. PNGs that carry alpha (including tRNS) decode
/// to RGBA; everything else decodes to RGB.
inline Image load_image(const std::string& path) {
  const auto bytes = detail::read_file_bytes(path);
  if (detail::is_png(bytes)) {
    png_uint_32 w = 0, h = 0, native = 0;
    {
      detail::PngImage probe;
      if (!png_image_begin_read_from_memory(&probe.img, bytes.data(), bytes.size()))
        throw Error(ErrorCode::UnreadableFile, path + ": " + probe.img.message);
      native = probe.img.format;
    }
    const bool alpha = (native & PNG_FORMAT_FLAG_ALPHA) != 0;
    auto data = detail::decode_png(bytes, path, alpha ? PNG_FORMAT_RGBA : PNG_FORMAT_RGB, w, h);
    return Image(static_cast<int>(w), static_cast<int>(h), alpha ? 4 : 3, std::move(data));
  }
  if (detail::is_jpeg(bytes)) return detail::decode_jpeg(bytes, path);
  if (bytes.empty()) throw Error(ErrorCode::UnreadableFile, path + ": empty file");
  throw Error(ErrorCode::UnsupportedFormat, path + ": not a PNG or JPEG file");
}

inline void save_png(const Image& img, const std::string& path) {
  detail::PngImage p;
  p.img.width = static_cast<png_uint_32>(img.width());
  p.img.height = static_cast<png_uint_32>(img.height());
  p.img.format = img.has_alpha() ? PNG_FORMAT_RGBA : PNG_FORMAT_RGB;
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  if (!png_image_write_to_file(&p.img, path.c_str(), 0, img.bytes().data(), 0, nullptr))
    throw Error(ErrorCode::UnreadableFile, "cannot write " + path + ": " + p.img.message);
}

inline void save_jpeg(const Image& img, const std::string& path, int quality = 95) {
  if (img.has_alpha()) throw Error(ErrorCode::UnsupportedFormat, "JPEG cannot carry alpha");
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw Error(ErrorCode::UnreadableFile, "cannot write " + path);
  jpeg_compress_struct cinfo;
  jpeg_error_mgr jerr;
  cinfo.err = jpeg_std_error(&jerr);
  jpeg_create_compress(&cinfo);
  jpeg_stdio_dest(&cinfo, f);
  cinfo.image_width = static_cast<JDIMENSION>(img.width());
  cinfo.image_height = static_cast<JDIMENSION>(img.height());
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    auto* row = const_cast<JSAMPROW>(img.bytes().data() + static_cast<std::size_t>(cinfo.next_scanline) * img.width() * 3);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
  std::fclose(f);
}

/// Masks persist as single-channel PNG with values {0,255}.
inline void save_mask(const BinaryMask& mask, const std::string& path) {
  std::vector<std::uint8_t> gray(mask.bits().size());
  for (std::size_t i = 0; i < gray.size(); ++i) gray[i] = mask.bits()[i] ? 255 : 0;
  detail::PngImage p;
  p.img.width = static_cast<png_uint_32>(mask.width());
  p.img.height = static_cast<png_uint_32>(mask.height());
  p.img.format = PNG_FORMAT_GRAY;
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  if (!png_image_write_to_file(&p.img, path.c_str(), 0, gray.data(), 0, nullptr))
    throw Error(ErrorCode::UnreadableFile, "cannot write " + path + ": " + p.img.message);
}

/// Any nonzero-ish value (>= 128) reads as set; RGB(A) masks use the first channel.
inline BinaryMask load_mask(const std::string& path) {
  const auto bytes = detail::read_file_bytes(path);
  if (!detail::is_png(bytes)) throw Error(ErrorCode::UnsupportedFormat, path + ": masks must be PNG");
  png_uint_32 w = 0, h = 0;
  const auto gray = detail::decode_png(bytes, path, PNG_FORMAT_GRAY, w, h);
  BinaryMask m(static_cast<int>(w), static_cast<int>(h));
  for (png_uint_32 y = 0; y < h; ++y)
    for (png_uint_32 x = 0; x < w; ++x) m.set(static_cast<int>(x), static_cast<int>(y), gray[y * w + x] >= 128);
  return m;
}

}  // namespace dishwx
