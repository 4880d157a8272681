#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "amtu/error.hpp"

namespace amtu {

/// Row-major single-channel raster.
template <typename T>
class Raster {
 public:
  using value_type = T;

  Raster() = default;
  Raster(int width, int height, T fill = T{})
      : width_(width), height_(height), data_(checked_size(width, height), fill) {}
  Raster(int width, int height, std::vector<T> data)
      : width_(width), height_(height), data_(std::move(data)) {
    if (data_.size() != checked_size(width, height)) {
      fail(ErrorCode::DimensionMismatch, "raster data length != width * height");
    }
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& at(int x, int y) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  const T& at(int x, int y) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  bool in_bounds(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }

  std::span<T> pixels() { return data_; }
  std::span<const T> pixels() const { return data_; }
  T* row(int y) { return data_.data() + static_cast<std::size_t>(y) * width_; }
  const T* row(int y) const { return data_.data() + static_cast<std::size_t>(y) * width_; }

  bool same_shape(const Raster& o) const { return width_ == o.width_ && height_ == o.height_; }
  friend bool operator==(const Raster&, const Raster&) = default;

 private:
  static std::size_t checked_size(int w, int h) {
    if (w < 0 || h < 0) fail(ErrorCode::InvalidArgument, "negative raster size");
    return static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

using GrayImage = Raster<std::uint8_t>;
using Label16 = Raster<std::uint16_t>;

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};
using RgbImage = Raster<Rgb>;

// 8-bit grayscale PNG or binary PGM (P5), chosen by file extension.
GrayImage read_gray(const std::string& path);
void write_gray_png(const GrayImage& img, const std::string& path);
void write_pgm(const GrayImage& img, const std::string& path);
// Single-channel 16-bit PNG for label maps.
Label16 read_label16_png(const std::string& path);
void write_label16_png(const Label16& img, const std::string& path);
void write_rgb_png(const RgbImage& img, const std::string& path);

}  // namespace amtu
