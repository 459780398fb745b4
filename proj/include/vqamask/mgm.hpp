#pragma once

// Mask generator: visual hidden states attend to the language hidden states
// of the tapped layer, are laid back onto the token grid and decoded to a
// per-pixel text probability. Train-time only; it never writes into the LLM.

#include <vector>

#include "vqamask/image.hpp"
#include "vqamask/numerics/param_set.hpp"
#include "vqamask/numerics/stage_cache.hpp"
#include "vqamask/rng.hpp"
#include "vqamask/tinyllm.hpp"

namespace vqamask::mgm {

struct MgmConfig {
  int layers = 4;
  int d = 32;
  int heads = 4;
  int ffn = 64;
  int kernel = 4;
  int stride = 2;
  int padding = 1;  // with kernel 4 / stride 2 every layer exactly doubles the extent
};

void validate(const MgmConfig& config);

/// Number of stride-2 deconv layers for g -> tile_side. Throws NonPowerOfTwoUpscale.
int decoder_depth(int grid_side, int tile_side);
/// Output channels of deconv layer i: d/2, d/4, ... and 1 for the last one.
int decoder_channels(const MgmConfig& config, int depth, int layer);

/// Registers mgm.* parameters for a decoder restoring grid_side -> tile_side.
void init_params(nn::ParamSet& params, const MgmConfig& config, int grid_side, int tile_side, Rng& rng);

/// weights[layer][head] is an [n × (l+m)] row-stochastic matrix.
struct AttentionRecord {
  std::vector<std::vector<nn::Tensor>> weights;
};

struct PredictedMask {
  nn::Tensor logits;  // [H × W]
  nn::Tensor probs;   // sigmoid(logits)
};

/// One block: V + MHA(LN_q(V), LN_kv(H)), then + relu(.W1 + b1)W2 + b2. `layer` is 1-based.
nn::Tensor cross_attention_layer(const nn::Tensor& visual, const nn::Tensor& language, const nn::ParamSet& params,
                                 const MgmConfig& config, int layer, AttentionRecord* record = nullptr,
                                 nn::StageCache* cache = nullptr, const std::string& slot = "");

/// [n × d] token rows (row-major over the grid) -> [d × g_h × g_w].
nn::Tensor reorg_2d(const nn::Tensor& tokens, std::size_t grid_h, std::size_t grid_w);
/// [d × g_h × g_w] -> [n × d].
nn::Tensor flatten_2d(const nn::Tensor& feature_map);

/// Transposed-conv chain to a single-channel map; relu between layers.
PredictedMask deconv_decode(const nn::Tensor& feature_map, const nn::ParamSet& params, const MgmConfig& config,
                            int tile_side, nn::StageCache* cache = nullptr, const std::string& slot = "");

struct MaskLoss {
  nn::Tensor total;
  nn::Tensor dice;
  nn::Tensor ce;
};

/// Dice (ε = 1, squared denominators) plus mean binary cross-entropy.
MaskLoss mask_loss(const PredictedMask& pred, const BinaryMask& target);

struct MgmOutput {
  PredictedMask mask;
  AttentionRecord attention;
};

/// Cross-attention stack over one tile's visual states, then reorg and decode.
/// `tile` only namespaces cache slots.
MgmOutput mgm_forward(const nn::Tensor& visual, const nn::Tensor& language, const nn::ParamSet& params,
                      const MgmConfig& config, std::size_t grid_h, std::size_t grid_w, int tile_side,
                      nn::StageCache* cache = nullptr, int tile = 0);

/// Single-tile convenience: language states are [Q_k; A_k].
MgmOutput mgm_forward(const llm::LayerTap& tap, const nn::ParamSet& params, const MgmConfig& config,
                      std::size_t grid_h, std::size_t grid_w, int tile_side, nn::StageCache* cache = nullptr);

}  // namespace vqamask::mgm
