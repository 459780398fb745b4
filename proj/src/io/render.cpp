#include "vqamask/io/render.hpp"

#include <algorithm>
#include <cmath>

#include "vqamask/error.hpp"
#include "vqamask/io/netpbm.hpp"

namespace vqamask::io {

Image compose_overlay(const Image& image, const Heatmap& overlay) {
  if (overlay.rows() != image.height() || overlay.cols() != image.width())
    fail(ErrorCode::ShapeMismatch, "overlay does not match the image size");
  const Image gray = to_grayscale(image);
  Image out(image.height(), image.width(), 3);
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x) {
      const int base = gray.at(y, x) / 2;
      const double a = std::clamp(overlay(y, x), 0.0, 1.0);
      out.at(y, x, 0) = static_cast<std::uint8_t>(base + static_cast<int>(std::lround(a * (255 - base))));
      out.at(y, x, 1) = static_cast<std::uint8_t>(base);
      out.at(y, x, 2) = static_cast<std::uint8_t>(base);
    }
  return out;
}

Heatmap mask_heatmap(const BinaryMask& mask) {
  Heatmap map(mask.rows(), mask.cols(), 0.0);
  for (int y = 0; y < mask.rows(); ++y)
    for (int x = 0; x < mask.cols(); ++x) map(y, x) = mask(y, x) ? 1.0 : 0.0;
  return map;
}

Heatmap attention_heatmap(const mgm::AttentionRecord& record, std::size_t layer, std::size_t head,
                          std::size_t key_begin, std::size_t key_end, int grid_h, int grid_w) {
  if (layer >= record.weights.size() || head >= record.weights[layer].size())
    fail(ErrorCode::InvalidArgument, "attention record has no layer " + std::to_string(layer) + " head " +
                                         std::to_string(head));
  const nn::Tensor& w = record.weights[layer][head];
  const std::size_t n = w.dim(0), keys = w.dim(1);
  if (n != static_cast<std::size_t>(grid_h) * static_cast<std::size_t>(grid_w) || key_begin > key_end || key_end > keys)
    fail(ErrorCode::ShapeMismatch, "attention heatmap: grid or key range does not match the record");
  Heatmap map(grid_h, grid_w, 0.0);
  const auto v = w.values();
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t k = key_begin; k < key_end; ++k) s += v[i * keys + k];
    map(static_cast<int>(i) / grid_w, static_cast<int>(i) % grid_w) = s;
  }
  const auto [lo, hi] = std::minmax_element(map.values().begin(), map.values().end());
  const double low = *lo, range = *hi - *lo;
  for (auto& x : map.values()) x = range > 0.0 ? (x - low) / range : 0.0;
  return map;
}

Heatmap upsample_nearest(const Heatmap& map, int height, int width) {
  Heatmap out(height, width, 0.0);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      out(y, x) = map(static_cast<int>(static_cast<long>(y) * map.rows() / height),
                      static_cast<int>(static_cast<long>(x) * map.cols() / width));
  return out;
}

Heatmap stitch_tiles(const std::vector<Heatmap>& tiles, vision::TileLayout layout) {
  if (tiles.size() != static_cast<std::size_t>(layout.count()) || tiles.empty())
    fail(ErrorCode::ShapeMismatch, "stitch_tiles: tile count does not match the layout");
  const int h = tiles.front().rows(), w = tiles.front().cols();
  Heatmap out(layout.rows * h, layout.cols * w, 0.0);
  for (int r = 0; r < layout.rows; ++r)
    for (int c = 0; c < layout.cols; ++c) {
      const Heatmap& t = tiles[static_cast<std::size_t>(r * layout.cols + c)];
      if (t.rows() != h || t.cols() != w) fail(ErrorCode::ShapeMismatch, "stitch_tiles: tiles differ in size");
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out(r * h + y, c * w + x) = t(y, x);
    }
  return out;
}

void render_overlay(const Image& image, const Heatmap& overlay, const std::filesystem::path& out) {
  write_image(out, compose_overlay(image, overlay));
}

}  // namespace vqamask::io
