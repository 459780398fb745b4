#pragma once

// Static overlays: the source at half intensity with a red highlight whose
// strength is the overlay value in [0, 1].

#include <filesystem>
#include <vector>

#include "vqamask/image.hpp"
#include "vqamask/mgm.hpp"
#include "vqamask/vision.hpp"

namespace vqamask::io {

using Heatmap = Grid<double>;

/// RGB composite: base = gray/2, R = base + round(a·(255 − base)), G = B = base.
/// Throws ShapeMismatch unless the overlay matches the image.
Image compose_overlay(const Image& image, const Heatmap& overlay);
Heatmap mask_heatmap(const BinaryMask& mask);

/// Attention of layer/head summed over key columns [key_begin, key_end),
/// laid out on the g_h × g_w token grid and min-max normalized (all zero
/// when constant).
Heatmap attention_heatmap(const mgm::AttentionRecord& record, std::size_t layer, std::size_t head,
                          std::size_t key_begin, std::size_t key_end, int grid_h, int grid_w);

/// Nearest-neighbour upsampling to height × width.
Heatmap upsample_nearest(const Heatmap& map, int height, int width);

/// Equal-sized per-tile maps, row-major over `layout`, joined into one map.
/// Throws ShapeMismatch on a count or size mismatch.
Heatmap stitch_tiles(const std::vector<Heatmap>& tiles, vision::TileLayout layout);

/// compose_overlay, written as PPM. Throws WriteFailure.
void render_overlay(const Image& image, const Heatmap& overlay, const std::filesystem::path& out);

}  // namespace vqamask::io
