#include "vqamask/vision.hpp"

#include <cmath>
#include <string>

#include "vqamask/numerics/ops.hpp"

namespace vqamask::vision {

using nn::Tensor;

void validate(const VisionConfig& c) {
  if (c.tile_side < 1 || c.max_tiles < 1 || c.patch < 1 || c.window < 1 || c.ratio < 1 || c.d < 1)
    fail(ErrorCode::InvalidArgument, "vision settings must be positive");
  if (c.tile_side % c.patch != 0) fail(ErrorCode::IndivisibleTile, "tile_side must be divisible by patch");
  if (c.window % c.ratio != 0) fail(ErrorCode::InvalidArgument, "window must be divisible by ratio");
  if (c.patch_grid() % c.window != 0) fail(ErrorCode::InvalidArgument, "patch grid must be divisible by window");
}

TileLayout choose_layout(int height, int width, int max_tiles) {
  if (max_tiles < 1) fail(ErrorCode::InvalidArgument, "max_tiles must be >= 1");
  if (height < 1 || width < 1) fail(ErrorCode::InvalidArgument, "cannot slice an empty image");
  const double target = std::log(static_cast<double>(width) / height);
  TileLayout best;
  double best_dist = std::abs(target);
  for (int rows = 1; rows <= max_tiles; ++rows) {
    for (int cols = 1; rows * cols <= max_tiles; ++cols) {
      const double dist = std::abs(std::log(static_cast<double>(cols) / rows) - target);
      const bool closer = dist < best_dist - 1e-12;
      const bool tied = std::abs(dist - best_dist) <= 1e-12;
      const bool fewer = rows * cols < best.count() || (rows * cols == best.count() && rows < best.rows);
      if (closer || (tied && fewer)) {
        best = {rows, cols};
        best_dist = dist;
      }
    }
  }
  return best;
}

SlicedImage slice_image(const Image& image, int max_tiles, int tile_side) {
  if (tile_side < 1) fail(ErrorCode::InvalidArgument, "tile_side must be >= 1");
  SlicedImage out;
  out.layout = choose_layout(image.height(), image.width(), max_tiles);
  const Image canvas = resize_nearest(image, out.layout.rows * tile_side, out.layout.cols * tile_side);
  for (int r = 0; r < out.layout.rows; ++r)
    for (int c = 0; c < out.layout.cols; ++c)
      out.tiles.push_back(crop(canvas, r * tile_side, c * tile_side, tile_side, tile_side));
  return out;
}

std::vector<BinaryMask> slice_mask(const BinaryMask& mask, TileLayout layout, int tile_side) {
  const BinaryMask canvas = resize_nearest(mask, layout.rows * tile_side, layout.cols * tile_side);
  std::vector<BinaryMask> tiles;
  for (int r = 0; r < layout.rows; ++r)
    for (int c = 0; c < layout.cols; ++c) tiles.push_back(crop(canvas, r * tile_side, c * tile_side, tile_side, tile_side));
  return tiles;
}

void init_params(nn::ParamSet& params, const VisionConfig& config, Rng& rng) {
  validate(config);
  auto gaussian = [&rng](nn::Shape shape, double stddev) {
    Tensor t(std::move(shape));
    for (auto& v : t.mutable_values()) v = rng.normal(0.0, stddev);
    return t;
  };
  const std::size_t pp = static_cast<std::size_t>(config.patch * config.patch);
  const std::size_t d = static_cast<std::size_t>(config.d);
  const std::size_t merged = static_cast<std::size_t>(config.merged_dim());
  params.add("vision.embed.weight", gaussian({pp, d}, 1.0 / std::sqrt(static_cast<double>(pp))));
  params.add("vision.embed.bias", Tensor({d}));
  params.add("connector.weight", gaussian({merged, d}, 1.0 / std::sqrt(static_cast<double>(merged))));
  params.add("connector.bias", Tensor({d}));
}

Tensor extract_patches(const Image& tile, int patch) {
  if (patch < 1 || tile.height() % patch != 0 || tile.width() % patch != 0)
    fail(ErrorCode::IndivisibleTile, "tile " + std::to_string(tile.height()) + "x" + std::to_string(tile.width()) +
                                         " is not divisible by patch " + std::to_string(patch));
  const Image gray = to_grayscale(tile);
  const std::size_t gh = static_cast<std::size_t>(gray.height() / patch);
  const std::size_t gw = static_cast<std::size_t>(gray.width() / patch);
  const std::size_t pp = static_cast<std::size_t>(patch * patch);
  Tensor patches({gh * gw, pp});
  auto v = patches.mutable_values();
  for (std::size_t r = 0; r < gh; ++r)
    for (std::size_t c = 0; c < gw; ++c)
      for (int py = 0; py < patch; ++py)
        for (int px = 0; px < patch; ++px)
          v[(r * gw + c) * pp + static_cast<std::size_t>(py * patch + px)] =
              gray.at(static_cast<int>(r) * patch + py, static_cast<int>(c) * patch + px) / 255.0;
  return patches;
}

TokenGrid patch_embed(const Image& tile, int patch, const nn::ParamSet& weights, nn::StageCache* cache,
                      int tile_index) {
  const std::string tag = ".t" + std::to_string(tile_index);
  const Tensor patches = nn::cached(cache, "vision.patches" + tag, {}, [&] { return extract_patches(tile, patch); });
  const Tensor& w = weights.at("vision.embed.weight");
  const Tensor& b = weights.at("vision.embed.bias");
  if (w.dim(0) != patches.dim(1))
    fail(ErrorCode::ShapeMismatch, "patch embedding expects patch size " + std::to_string(w.dim(0)));
  const std::size_t gh = static_cast<std::size_t>(tile.height() / patch);
  const std::size_t gw = static_cast<std::size_t>(tile.width() / patch);
  Tensor tokens = nn::cached(cache, "vision.embed" + tag, {patches, w, b},
                             [&] { return nn::reshape(nn::add_row_bias(nn::matmul(patches, w), b), {gh, gw, w.dim(1)}); });
  return TokenGrid{tokens};
}

std::vector<std::size_t> pixel_shuffle_index(std::size_t rows, std::size_t cols, std::size_t dim, int window,
                                             int ratio) {
  if (window < 1 || ratio < 1 || window % ratio != 0 || rows % static_cast<std::size_t>(window) != 0 ||
      cols % static_cast<std::size_t>(window) != 0)
    fail(ErrorCode::ShapeMismatch, "grid " + std::to_string(rows) + "x" + std::to_string(cols) +
                                       " incompatible with window " + std::to_string(window) + " / ratio " +
                                       std::to_string(ratio));
  const std::size_t r = static_cast<std::size_t>(ratio);
  const std::size_t win = static_cast<std::size_t>(window);
  const std::size_t sub = win / r;  // merged tokens per window side
  const std::size_t out_cols = cols / r;
  const std::size_t out_dim = dim * r * r;
  std::vector<std::size_t> index(rows * cols * dim);
  for (std::size_t wy = 0; wy < rows / win; ++wy)
    for (std::size_t wx = 0; wx < cols / win; ++wx)
      for (std::size_t by = 0; by < sub; ++by)
        for (std::size_t bx = 0; bx < sub; ++bx) {
          const std::size_t out_row = wy * sub + by;
          const std::size_t out_col = wx * sub + bx;
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < r; ++j) {
              const std::size_t src_row = wy * win + by * r + i;
              const std::size_t src_col = wx * win + bx * r + j;
              for (std::size_t e = 0; e < dim; ++e)
                index[(out_row * out_cols + out_col) * out_dim + (i * r + j) * dim + e] =
                    (src_row * cols + src_col) * dim + e;
            }
        }
  return index;
}

TokenGrid local_pixel_shuffle(const TokenGrid& grid, int window, int ratio) {
  const auto index = pixel_shuffle_index(grid.rows(), grid.cols(), grid.dim(), window, ratio);
  const std::size_t r = static_cast<std::size_t>(ratio);
  return TokenGrid{nn::permute(grid.tokens, index, {grid.rows() / r, grid.cols() / r, grid.dim() * r * r})};
}

TokenGrid local_pixel_unshuffle(const TokenGrid& grid, int window, int ratio) {
  const std::size_t r = static_cast<std::size_t>(ratio);
  if (ratio < 1 || grid.dim() % (r * r) != 0)
    fail(ErrorCode::ShapeMismatch, "token dim not divisible by ratio^2");
  const std::size_t rows = grid.rows() * r, cols = grid.cols() * r, dim = grid.dim() / (r * r);
  const auto forward = pixel_shuffle_index(rows, cols, dim, window, ratio);
  std::vector<std::size_t> inverse(forward.size());
  for (std::size_t i = 0; i < forward.size(); ++i) inverse[forward[i]] = i;
  return TokenGrid{nn::permute(grid.tokens, inverse, {rows, cols, dim})};
}

Tensor flatten_tokens(const TokenGrid& grid) { return nn::reshape(grid.tokens, {grid.count(), grid.dim()}); }

Tensor connect(const Tensor& merged, const nn::ParamSet& params) {
  return nn::add_row_bias(nn::matmul(merged, params.at("connector.weight")), params.at("connector.bias"));
}

Tensor encode_tile(const Image& tile, const VisionConfig& config, const nn::ParamSet& params, nn::StageCache* cache,
                   int tile_index) {
  const TokenGrid grid = patch_embed(tile, config.patch, params, cache, tile_index);
  const std::string tag = ".t" + std::to_string(tile_index);
  return nn::cached(cache, "vision.connect" + tag,
                    {grid.tokens, params.at("connector.weight"), params.at("connector.bias")}, [&] {
                      const TokenGrid merged = local_pixel_shuffle(grid, config.window, config.ratio);
                      return connect(flatten_tokens(merged), params);
                    });
}

}  // namespace vqamask::vision
