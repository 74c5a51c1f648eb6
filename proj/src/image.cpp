#include "m2m/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <vector>

namespace m2m::io {

namespace {

std::uint8_t to_byte(double v) {
  double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

bool has_suffix(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

Tensor from_rgb8(const std::vector<std::uint8_t>& buf, int channels, int h,
                 int w) {
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  std::vector<double> data(static_cast<std::size_t>(channels) * plane);
  for (std::int64_t p = 0; p < plane; ++p)
    for (int c = 0; c < channels; ++c)
      data[c * plane + p] = buf[p * channels + c] / 255.0;
  return diff::Tensor::from_data({channels, h, w}, std::move(data));
}

std::vector<std::uint8_t> to_rgb8(const Tensor& frame) {
  const int c = frame.dim(0), h = frame.dim(1), w = frame.dim(2);
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(c) * plane);
  for (std::int64_t p = 0; p < plane; ++p)
    for (int ch = 0; ch < c; ++ch)
      buf[p * c + ch] = to_byte(frame.data()[ch * plane + p]);
  return buf;
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Tensor read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw image_error(ImageErrorKind::io, "cannot open " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6")
    throw image_error(ImageErrorKind::parse, "not a binary PPM: " + path);
  auto next_token = [&in, &path]() {
    // skip whitespace and '#' comment lines
    std::string tok;
    while (in >> tok) {
      if (tok[0] == '#') {
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      return tok;
    }
    throw image_error(ImageErrorKind::parse, "truncated PPM header: " + path);
  };
  int w = std::stoi(next_token());
  int h = std::stoi(next_token());
  int maxval = std::stoi(next_token());
  if (w <= 0 || h <= 0)
    throw image_error(ImageErrorKind::parse, "bad PPM dimensions: " + path);
  if (maxval != 255)
    throw image_error(ImageErrorKind::unsupported_depth,
                      "only 8-bit PPM supported: " + path);
  in.get();  // single whitespace after maxval
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size()));
  if (!in) throw image_error(ImageErrorKind::parse, "truncated PPM: " + path);
  return from_rgb8(buf, 3, h, w);
}

void write_ppm(const std::string& path, const Tensor& frame) {
  if (frame.rank() != 3 || frame.dim(0) != 3)
    throw std::invalid_argument("write_ppm: expects {3,H,W}");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw image_error(ImageErrorKind::io, "cannot open " + path);
  out << "P6\n" << frame.dim(2) << " " << frame.dim(1) << "\n255\n";
  std::vector<std::uint8_t> buf = to_rgb8(frame);
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
  if (!out) throw image_error(ImageErrorKind::io, "write failed: " + path);
}

Tensor read_png(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw image_error(ImageErrorKind::io, "cannot open " + path);
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw image_error(ImageErrorKind::io, "libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw image_error(ImageErrorKind::io, "libpng init failed");
  }
  std::vector<std::uint8_t> buf;
  std::vector<png_bytep> rows;
  int w = 0, h = 0, channels = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw image_error(ImageErrorKind::parse, "PNG decode failed: " + path);
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  int bit_depth = png_get_bit_depth(png, info);
  if (bit_depth == 16) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw image_error(ImageErrorKind::unsupported_depth,
                      "16-bit PNG not supported: " + path);
  }
  int color_type = png_get_color_type(png, info);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  w = static_cast<int>(png_get_image_width(png, info));
  h = static_cast<int>(png_get_image_height(png, info));
  channels = png_get_channels(png, info);
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw image_error(ImageErrorKind::parse,
                      "unsupported PNG channel layout: " + path);
  }
  buf.resize(static_cast<std::size_t>(w) * h * channels);
  rows.resize(h);
  for (int y = 0; y < h; ++y)
    rows[y] = buf.data() + static_cast<std::size_t>(y) * w * channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return from_rgb8(buf, channels, h, w);
}

void write_png(const std::string& path, const Tensor& frame) {
  if (frame.rank() != 3 || (frame.dim(0) != 1 && frame.dim(0) != 3))
    throw std::invalid_argument("write_png: expects {1,H,W} or {3,H,W}");
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw image_error(ImageErrorKind::io, "cannot open " + path);
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw image_error(ImageErrorKind::io, "libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw image_error(ImageErrorKind::io, "libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw image_error(ImageErrorKind::io, "PNG encode failed: " + path);
  }
  const int c = frame.dim(0), h = frame.dim(1), w = frame.dim(2);
  png_init_io(png, f.get());
  png_set_IHDR(png, info, w, h, 8,
               c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<std::uint8_t> buf = to_rgb8(frame);
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y)
    rows[y] = buf.data() + static_cast<std::size_t>(y) * w * c;
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor read_image(const std::string& path) {
  if (has_suffix(path, ".ppm")) return read_ppm(path);
  if (has_suffix(path, ".png")) return read_png(path);
  throw image_error(ImageErrorKind::parse, "unsupported image format: " + path);
}

void write_image(const std::string& path, const Tensor& frame) {
  if (has_suffix(path, ".ppm")) return write_ppm(path, frame);
  if (has_suffix(path, ".png")) return write_png(path, frame);
  throw image_error(ImageErrorKind::parse, "unsupported image format: " + path);
}

}  // namespace m2m::io
