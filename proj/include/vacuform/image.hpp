#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <png.h>

#include "vacuform/error.hpp"

namespace vacuform {

/// 8-bit interleaved image, 1 (grey) or 3 (RGB) channels. Storage format for
/// captured and rendered views.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> data;

  Image() = default;
  Image(int w, int h, int c) : width(w), height(h), channels(c), data(std::size_t(w) * h * c, 0) {}

  bool empty() const { return data.empty(); }
  std::uint8_t& at(int x, int y, int c) { return data[(std::size_t(y) * width + x) * channels + c]; }
  std::uint8_t at(int x, int y, int c) const {
    return data[(std::size_t(y) * width + x) * channels + c];
  }
  bool same_shape(const Image& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
  friend bool operator==(const Image&, const Image&) = default;
};

/// Single-channel float plane, values nominally in [0,1].
struct Plane {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  Plane() = default;
  Plane(int w, int h, float fill = 0.0f) : width(w), height(h), data(std::size_t(w) * h, fill) {}

  float& at(int x, int y) { return data[std::size_t(y) * width + x]; }
  float at(int x, int y) const { return data[std::size_t(y) * width + x]; }
  bool same_shape(const Plane& o) const { return width == o.width && height == o.height; }
  friend bool operator==(const Plane&, const Plane&) = default;
};

/// Binary mask; 1 = sample region, 0 = background.
struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(int w, int h) : width(w), height(h), data(std::size_t(w) * h, 0) {}

  std::uint8_t& at(int x, int y) { return data[std::size_t(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return data[std::size_t(y) * width + x]; }
  std::size_t count() const { return std::count(data.begin(), data.end(), std::uint8_t{1}); }
  Mask complement() const {
    Mask m = *this;
    for (auto& v : m.data) v = v ? 0 : 1;
    return m;
  }
  friend bool operator==(const Mask&, const Mask&) = default;
};

inline double mask_iou(const Mask& a, const Mask& b) {
  require(a.width == b.width && a.height == b.height, ErrorCode::validation, "mask size mismatch");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    inter += (a.data[i] && b.data[i]);
    uni += (a.data[i] || b.data[i]);
  }
  return uni == 0 ? 1.0 : double(inter) / double(uni);
}

inline std::uint8_t to_u8(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

/// Rec.601 luma, the greyscale conversion used throughout.
inline float luma(float r, float g, float b) { return 0.299f * r + 0.587f * g + 0.114f * b; }

inline Plane luminance(const Image& img) {
  Plane p(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      if (img.channels == 1) {
        p.at(x, y) = img.at(x, y, 0) / 255.0f;
      } else {
        p.at(x, y) = luma(img.at(x, y, 0) / 255.0f, img.at(x, y, 1) / 255.0f, img.at(x, y, 2) / 255.0f);
      }
    }
  return p;
}

inline Image plane_to_image(const Plane& p) {
  Image img(p.width, p.height, 1);
  for (std::size_t i = 0; i < p.data.size(); ++i) img.data[i] = to_u8(p.data[i]);
  return img;
}

/// Bilinear resampling to (w, h) with pixel-centre alignment.
inline Image resize_bilinear(const Image& src, int w, int h) {
  if (src.width == w && src.height == h) return src;
  Image out(w, h, src.channels);
  const double sx = double(src.width) / w, sy = double(src.height) / h;
  for (int y = 0; y < h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, double(src.height - 1));
    const int y0 = int(fy), y1 = std::min(y0 + 1, src.height - 1);
    const double ty = fy - y0;
    for (int x = 0; x < w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, double(src.width - 1));
      const int x0 = int(fx), x1 = std::min(x0 + 1, src.width - 1);
      const double tx = fx - x0;
      for (int c = 0; c < src.channels; ++c) {
        const double top = src.at(x0, y0, c) * (1 - tx) + src.at(x1, y0, c) * tx;
        const double bot = src.at(x0, y1, c) * (1 - tx) + src.at(x1, y1, c) * tx;
        out.at(x, y, c) = static_cast<std::uint8_t>(std::lround(top * (1 - ty) + bot * ty));
      }
    }
  }
  return out;
}

namespace detail {
struct FileCloser {
  void operator()(std::FILE* f) const { if (f) std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;
}  // namespace detail

inline void write_png(const std::filesystem::path& path, const Image& img) {
  require(!img.empty() && (img.channels == 1 || img.channels == 3), ErrorCode::validation,
          "write_png: image must be 1- or 3-channel and nonempty");
  detail::FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) fail(ErrorCode::io, "cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::io, "libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::io, "failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.width, img.height, 8,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = std::size_t(img.width) * img.channels;
  for (int y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(img.data.data() + y * stride));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

namespace detail {
struct MemoryReader {
  const unsigned char* data;
  std::size_t size;
  std::size_t pos;
};

inline void read_from_memory(png_structp png, png_bytep out, png_size_t n) {
  auto* r = static_cast<MemoryReader*>(png_get_io_ptr(png));
  if (r->pos + n > r->size) png_error(png, "truncated PNG");
  std::memcpy(out, r->data + r->pos, n);
  r->pos += n;
}

inline void write_to_memory(png_structp png, png_bytep in, png_size_t n) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(in), n);
}

/// Decodes after the 8 signature bytes have been checked; `bind` installs the
/// input source on the read struct.
template <typename Bind>
Image decode_png(Bind&& bind, const std::string& what) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorCode::io, "libpng initialisation failed");
  }
  Image img;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorCode::io, "corrupt PNG " + what);
  }
  bind(png);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  const auto depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (depth == 16) png_set_strip_16(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png), png_set_strip_alpha(png);
  png_read_update_info(png, info);
  const int w = int(png_get_image_width(png, info));
  const int h = int(png_get_image_height(png, info));
  const int c = int(png_get_channels(png, info));
  img = Image(w, h, c);
  rows.resize(h);
  for (int y = 0; y < h; ++y) rows[y] = img.data.data() + std::size_t(y) * w * c;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  require(c == 1 || c == 3, ErrorCode::io, "unsupported PNG channel layout in " + what);
  return img;
}
}  // namespace detail

/// Reads any 8/16-bit PNG and returns grey or RGB 8-bit (alpha dropped).
inline Image read_png(const std::filesystem::path& path) {
  detail::FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) fail(ErrorCode::io, "cannot open " + path.string());
  png_byte header[8];
  if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8))
    fail(ErrorCode::io, path.string() + " is not a PNG file");
  return detail::decode_png([&](png_structp png) { png_init_io(png, fp.get()); }, path.string());
}

inline Image decode_png_bytes(const std::string& bytes, const std::string& what = "upload") {
  if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8))
    fail(ErrorCode::validation, what + " is not a PNG file", what);
  detail::MemoryReader reader{reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), 8};
  return detail::decode_png([&](png_structp png) { png_set_read_fn(png, &reader, detail::read_from_memory); }, what);
}

inline std::string encode_png_bytes(const Image& img) {
  require(!img.empty() && (img.channels == 1 || img.channels == 3), ErrorCode::validation,
          "encode_png_bytes: image must be 1- or 3-channel and nonempty");
  std::string out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::io, "libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::io, "PNG encoding failed");
  }
  png_set_write_fn(png, &out, detail::write_to_memory, nullptr);
  png_set_IHDR(png, info, img.width, img.height, 8,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = std::size_t(img.width) * img.channels;
  for (int y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(img.data.data() + y * stride));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

inline Image to_rgb(const Image& img) {
  if (img.channels == 3) return img;
  Image out(img.width, img.height, 3);
  for (std::size_t i = 0; i < img.data.size(); ++i)
    out.data[3 * i] = out.data[3 * i + 1] = out.data[3 * i + 2] = img.data[i];
  return out;
}

}  // namespace vacuform
