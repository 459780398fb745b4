#pragma once

// Toy visual front end: dynamic slicing into fixed-size tiles, a linear patch
// embedding standing in for the visual foundation model, and the token merge
// that concatenates ratio×ratio neighbours inside each local window.

#include <cstdint>
#include <span>
#include <vector>

#include "vqamask/image.hpp"
#include "vqamask/numerics/param_set.hpp"
#include "vqamask/numerics/stage_cache.hpp"
#include "vqamask/rng.hpp"

namespace vqamask::vision {

struct VisionConfig {
  int tile_side = 64;
  int max_tiles = 6;
  int patch = 8;
  int window = 4;
  int ratio = 2;
  int d = 32;

  int patch_grid() const { return tile_side / patch; }
  int merged_grid() const { return patch_grid() / ratio; }
  int merged_dim() const { return d * ratio * ratio; }
  int tokens_per_tile() const { return merged_grid() * merged_grid(); }
};

/// Throws InvalidArgument on inconsistent settings.
void validate(const VisionConfig& config);

struct TileLayout {
  int rows = 1;
  int cols = 1;
  int count() const { return rows * cols; }
  friend bool operator==(const TileLayout&, const TileLayout&) = default;
};

/// Grid with rows·cols <= max_tiles whose cols/rows ratio is closest to
/// width/height in log space; ties go to fewer tiles, then fewer rows.
TileLayout choose_layout(int height, int width, int max_tiles);

struct SlicedImage {
  TileLayout layout;
  std::vector<Image> tiles;  // row-major, each tile_side × tile_side
};

SlicedImage slice_image(const Image& image, int max_tiles, int tile_side);
/// Per-tile crops of `mask` under the same resize and layout as slice_image.
std::vector<BinaryMask> slice_mask(const BinaryMask& mask, TileLayout layout, int tile_side);

/// Tokens laid out as [g_h × g_w × d], row-major over the grid.
struct TokenGrid {
  nn::Tensor tokens;

  std::size_t rows() const { return tokens.dim(0); }
  std::size_t cols() const { return tokens.dim(1); }
  std::size_t dim() const { return tokens.dim(2); }
  std::size_t count() const { return rows() * cols(); }
};

/// Registers vision.embed.{weight,bias} and connector.{weight,bias}.
void init_params(nn::ParamSet& params, const VisionConfig& config, Rng& rng);

/// Flattened patches of a grayscale tile scaled to [0,1]: [(side/patch)² × patch²].
/// Throws IndivisibleTile.
nn::Tensor extract_patches(const Image& tile, int patch);

/// token = flattened patch · W_embed + b_embed. Throws IndivisibleTile.
/// `tile_index` only namespaces cache slots when several tiles share a cache.
TokenGrid patch_embed(const Image& tile, int patch, const nn::ParamSet& weights, nn::StageCache* cache = nullptr,
                      int tile_index = 0);

/// Source index of every output scalar of local_pixel_shuffle.
std::vector<std::size_t> pixel_shuffle_index(std::size_t rows, std::size_t cols, std::size_t dim, int window,
                                             int ratio);

/// Within each window×window block, every ratio×ratio sub-block of tokens is
/// concatenated (row-major) into one token. Throws ShapeMismatch.
TokenGrid local_pixel_shuffle(const TokenGrid& grid, int window, int ratio);
/// Exact inverse of local_pixel_shuffle for the same window and ratio.
TokenGrid local_pixel_unshuffle(const TokenGrid& grid, int window, int ratio);

/// [g_h × g_w × d] -> [n × d].
nn::Tensor flatten_tokens(const TokenGrid& grid);

/// Modality connector: [n × d·ratio²] -> [n × d].
nn::Tensor connect(const nn::Tensor& merged, const nn::ParamSet& params);

/// patch_embed -> local_pixel_shuffle -> flatten -> connect for one tile.
nn::Tensor encode_tile(const Image& tile, const VisionConfig& config, const nn::ParamSet& params,
                       nn::StageCache* cache = nullptr, int tile_index = 0);

}  // namespace vqamask::vision
