#include <png.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include "amtu/image.hpp"

namespace amtu {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Reads a PNG into 8- or 16-bit single-channel samples (bit_depth selects).
template <typename T>
Raster<T> read_png(const std::string& path, int want_depth) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) fail(ErrorCode::IoFailure, "cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) fail(ErrorCode::IoFailure, "libpng init failed");
  Raster<T> out;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorCode::IoFailure, "malformed png " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
      color == PNG_COLOR_TYPE_PALETTE) {
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  }
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (want_depth == 8 && depth == 16) png_set_strip_16(png);
  if (want_depth == 16 && depth == 16) png_set_swap(png);  // host little-endian samples
  png_read_update_info(png, info);
  const int row_bytes = static_cast<int>(png_get_rowbytes(png, info));
  std::vector<png_byte> buffer(static_cast<std::size_t>(row_bytes) * h);
  rows.resize(h);
  for (int y = 0; y < h; ++y) rows[y] = buffer.data() + static_cast<std::size_t>(y) * row_bytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  const int out_depth = png_get_bit_depth(png, info);
  png_destroy_read_struct(&png, &info, nullptr);

  out = Raster<T>(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (out_depth == 16) {
        std::uint16_t v;
        std::memcpy(&v, rows[y] + 2 * x, 2);
        out.at(x, y) = static_cast<T>(v);
      } else {
        out.at(x, y) = static_cast<T>(rows[y][x]);
      }
    }
  }
  return out;
}

void write_png(const std::string& path, int w, int h, int depth, int color,
               const std::vector<png_bytep>& rows, bool swap16) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) fail(ErrorCode::IoFailure, "cannot write " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) fail(ErrorCode::IoFailure, "libpng init failed");
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::IoFailure, "png write failed " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, w, h, depth, color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (swap16) png_set_swap(png);
  png_write_image(png, const_cast<png_bytepp>(rows.data()));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

GrayImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoFailure, "cannot open " + path);
  std::string magic;
  in >> magic;
  if (magic != "P5") fail(ErrorCode::ParseError, "only binary P5 PGM is supported: " + path);
  auto next_int = [&]() {
    int v;
    while (in >> std::ws && in.peek() == '#') {
      std::string line;
      std::getline(in, line);
    }
    if (!(in >> v)) fail(ErrorCode::ParseError, "truncated pgm header: " + path);
    return v;
  };
  const int w = next_int(), h = next_int(), maxval = next_int();
  if (maxval != 255) fail(ErrorCode::ParseError, "pgm maxval must be 255: " + path);
  in.get();
  std::vector<std::uint8_t> data(static_cast<std::size_t>(w) * h);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (in.gcount() != static_cast<std::streamsize>(data.size())) {
    fail(ErrorCode::ParseError, "truncated pgm data: " + path);
  }
  return GrayImage(w, h, std::move(data));
}

}  // namespace

GrayImage read_gray(const std::string& path) {
  if (ends_with(path, ".pgm")) return read_pgm(path);
  return read_png<std::uint8_t>(path, 8);
}

void write_gray_png(const GrayImage& img, const std::string& path) {
  std::vector<png_bytep> rows(img.height());
  for (int y = 0; y < img.height(); ++y) rows[y] = const_cast<png_bytep>(img.row(y));
  write_png(path, img.width(), img.height(), 8, PNG_COLOR_TYPE_GRAY, rows, false);
}

void write_pgm(const GrayImage& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoFailure, "cannot write " + path);
  out << "P5\n" << img.width() << " " << img.height() << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels().data()),
            static_cast<std::streamsize>(img.size()));
}

Label16 read_label16_png(const std::string& path) { return read_png<std::uint16_t>(path, 16); }

void write_label16_png(const Label16& img, const std::string& path) {
  std::vector<png_bytep> rows(img.height());
  for (int y = 0; y < img.height(); ++y) {
    rows[y] = reinterpret_cast<png_bytep>(const_cast<std::uint16_t*>(img.row(y)));
  }
  write_png(path, img.width(), img.height(), 16, PNG_COLOR_TYPE_GRAY, rows, true);
}

void write_rgb_png(const RgbImage& img, const std::string& path) {
  static_assert(sizeof(Rgb) == 3);
  std::vector<png_bytep> rows(img.height());
  for (int y = 0; y < img.height(); ++y) {
    rows[y] = reinterpret_cast<png_bytep>(const_cast<Rgb*>(img.row(y)));
  }
  write_png(path, img.width(), img.height(), 8, PNG_COLOR_TYPE_RGB, rows, false);
}

}  // namespace amtu
