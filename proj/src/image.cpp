#include "vqamask/image.hpp"

#include <cmath>

namespace vqamask {

Image::Image(int height, int width, int channels, std::uint8_t fill)
    : height_(height), width_(width), channels_(channels) {
  if (height < 0 || width < 0) fail(ErrorCode::InvalidArgument, "negative image extent");
  if (channels != 1 && channels != 3) fail(ErrorCode::InvalidArgument, "images have 1 or 3 channels");
  pixels_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

Image::Image(int height, int width, int channels, std::vector<std::uint8_t> pixels)
    : height_(height), width_(width), channels_(channels), pixels_(std::move(pixels)) {
  if (height < 0 || width < 0) fail(ErrorCode::InvalidArgument, "negative image extent");
  if (channels != 1 && channels != 3) fail(ErrorCode::InvalidArgument, "images have 1 or 3 channels");
  if (pixels_.size() != static_cast<std::size_t>(height) * width * channels)
    fail(ErrorCode::ShapeMismatch, "pixel count does not match image extents");
}

Image to_grayscale(const Image& image) {
  if (image.channels() == 1) return image;
  Image gray(image.height(), image.width(), 1);
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      // Integer form of 0.299 R + 0.587 G + 0.114 B with round-half-up.
      const int luma = 299 * image.at(y, x, 0) + 587 * image.at(y, x, 1) + 114 * image.at(y, x, 2);
      gray.at(y, x) = static_cast<std::uint8_t>((luma + 500) / 1000);
    }
  }
  return gray;
}

namespace {

int source_index(int dst, int src_extent, int dst_extent) {
  return static_cast<int>(static_cast<long long>(dst) * src_extent / dst_extent);
}

}  // namespace

Image resize_nearest(const Image& image, int height, int width) {
  Image out(height, width, image.channels());
  if (image.height() == 0 || image.width() == 0) return out;
  for (int y = 0; y < height; ++y) {
    const int sy = source_index(y, image.height(), height);
    for (int x = 0; x < width; ++x) {
      const int sx = source_index(x, image.width(), width);
      for (int ch = 0; ch < image.channels(); ++ch) out.at(y, x, ch) = image.at(sy, sx, ch);
    }
  }
  return out;
}

BinaryMask resize_nearest(const BinaryMask& mask, int height, int width) {
  BinaryMask out(height, width);
  if (mask.empty()) return out;
  for (int y = 0; y < height; ++y) {
    const int sy = source_index(y, mask.rows(), height);
    for (int x = 0; x < width; ++x) out(y, x) = mask(sy, source_index(x, mask.cols(), width));
  }
  return out;
}

Image crop(const Image& image, int y0, int x0, int h, int w) {
  Image out(h, w, image.channels());
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      for (int ch = 0; ch < image.channels(); ++ch) out.at(r, c, ch) = image.at(y0 + r, x0 + c, ch);
  return out;
}

BinaryMask crop(const BinaryMask& mask, int y0, int x0, int h, int w) {
  BinaryMask out(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) out(r, c) = mask(y0 + r, x0 + c);
  return out;
}

}  // namespace vqamask
