#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "vqamask/error.hpp"

namespace vqamask {

/// Dense row-major 2-D grid.
template <class T>
class Grid {
 public:
  Grid() = default;
  Grid(int rows, int cols, T fill = T{})
      : rows_(rows), cols_(cols), values_(static_cast<std::size_t>(rows) * cols, fill) {
    if (rows < 0 || cols < 0) fail(ErrorCode::InvalidArgument, "negative grid extent");
  }
  Grid(int rows, int cols, std::vector<T> values) : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != static_cast<std::size_t>(rows) * cols)
      fail(ErrorCode::ShapeMismatch, "grid value count does not match extents");
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  T& operator()(int r, int c) { return values_[static_cast<std::size_t>(r) * cols_ + c]; }
  const T& operator()(int r, int c) const { return values_[static_cast<std::size_t>(r) * cols_ + c]; }

  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<T> values_;
};

/// 8-bit image, grayscale (1 channel) or interleaved RGB (3 channels).
class Image {
 public:
  Image() = default;
  Image(int height, int width, int channels = 1, std::uint8_t fill = 0);
  Image(int height, int width, int channels, std::vector<std::uint8_t> pixels);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }

  std::uint8_t& at(int y, int x, int ch = 0) { return pixels_[index(y, x, ch)]; }
  std::uint8_t at(int y, int x, int ch = 0) const { return pixels_[index(y, x, ch)]; }

  std::span<std::uint8_t> pixels() { return pixels_; }
  std::span<const std::uint8_t> pixels() const { return pixels_; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t index(int y, int x, int ch) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + ch;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 1;
  std::vector<std::uint8_t> pixels_;
};

/// H×W grid over {0, 1}.
using BinaryMask = Grid<std::uint8_t>;

/// ITU-R BT.601 luma, rounded to nearest. Grayscale input is returned unchanged.
Image to_grayscale(const Image& image);

/// Nearest-neighbour resize; source index = floor(dst * src_extent / dst_extent).
Image resize_nearest(const Image& image, int height, int width);
BinaryMask resize_nearest(const BinaryMask& mask, int height, int width);

/// Copies the rectangle [y0, y0+h) × [x0, x0+w); bounds are the caller's contract.
Image crop(const Image& image, int y0, int x0, int h, int w);
BinaryMask crop(const BinaryMask& mask, int y0, int x0, int h, int w);

}  // namespace vqamask
