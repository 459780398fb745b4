#include "vqamask/mgm.hpp"

#include <cmath>
#include <string>

#include "vqamask/error.hpp"
#include "vqamask/numerics/ops.hpp"

namespace vqamask::mgm {

using nn::Tensor;

namespace {

std::string layer_prefix(int layer) { return "mgm.layer" + std::to_string(layer) + "."; }
std::string deconv_prefix(int layer) { return "mgm.deconv" + std::to_string(layer) + "."; }

Tensor gaussian(Rng& rng, nn::Shape shape, double stddev) {
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_values()) v = rng.normal(0.0, stddev);
  return t;
}

Tensor filled(nn::Shape shape, double value) {
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_values()) v = value;
  return t;
}

}  // namespace

void validate(const MgmConfig& c) {
  if (c.layers < 1 || c.d < 1 || c.heads < 1 || c.ffn < 1 || c.kernel < 1 || c.stride < 1 || c.padding < 0)
    fail(ErrorCode::InvalidArgument, "mgm settings must be positive");
  if (c.d % c.heads != 0) fail(ErrorCode::InvalidArgument, "mgm d must be divisible by heads");
  if ((c.kernel - 2 * c.padding) != c.stride)
    fail(ErrorCode::InvalidArgument, "deconv kernel/padding must give an exact stride-fold upscale");
}

int decoder_depth(int grid_side, int tile_side) {
  if (grid_side < 1 || tile_side < grid_side || tile_side % grid_side != 0)
    fail(ErrorCode::NonPowerOfTwoUpscale,
         "tile " + std::to_string(tile_side) + " is not a multiple of grid " + std::to_string(grid_side));
  const int factor = tile_side / grid_side;
  if (factor < 2 || (factor & (factor - 1)) != 0)
    fail(ErrorCode::NonPowerOfTwoUpscale, "upscale factor " + std::to_string(factor) + " is not a power of two >= 2");
  int depth = 0;
  for (int f = factor; f > 1; f >>= 1) ++depth;
  return depth;
}

int decoder_channels(const MgmConfig& config, int depth, int layer) {
  if (layer == depth - 1) return 1;
  return std::max(1, config.d >> (layer + 1));
}

void init_params(nn::ParamSet& params, const MgmConfig& config, int grid_side, int tile_side, Rng& rng) {
  validate(config);
  const std::size_t d = static_cast<std::size_t>(config.d);
  const std::size_t ffn = static_cast<std::size_t>(config.ffn);
  const double proj = 1.0 / std::sqrt(static_cast<double>(d));
  for (int l = 1; l <= config.layers; ++l) {
    const std::string p = layer_prefix(l);
    params.add(p + "ln_q.gamma", filled({d}, 1.0));
    params.add(p + "ln_q.beta", Tensor({d}));
    params.add(p + "ln_kv.gamma", filled({d}, 1.0));
    params.add(p + "ln_kv.beta", Tensor({d}));
    params.add(p + "wq", gaussian(rng, {d, d}, proj));
    params.add(p + "wk", gaussian(rng, {d, d}, proj));
    params.add(p + "wv", gaussian(rng, {d, d}, proj));
    params.add(p + "ffn.w1", gaussian(rng, {d, ffn}, std::sqrt(2.0) * proj));
    params.add(p + "ffn.b1", Tensor({ffn}));
    params.add(p + "ffn.w2", gaussian(rng, {ffn, d}, 1.0 / std::sqrt(static_cast<double>(ffn))));
    params.add(p + "ffn.b2", Tensor({d}));
  }
  const int depth = decoder_depth(grid_side, tile_side);
  const std::size_t k = static_cast<std::size_t>(config.kernel);
  int in = config.d;
  for (int i = 0; i < depth; ++i) {
    const int out = decoder_channels(config, depth, i);
    // each output pixel sees in·(k/stride)² kernel taps
    const double taps = in * std::pow(static_cast<double>(config.kernel) / config.stride, 2.0);
    const double gain = i + 1 < depth ? 2.0 : 1.0;
    params.add(deconv_prefix(i + 1) + "kernel",
               gaussian(rng, {static_cast<std::size_t>(in), static_cast<std::size_t>(out), k, k}, std::sqrt(gain / taps)));
    params.add(deconv_prefix(i + 1) + "bias", Tensor({static_cast<std::size_t>(out)}));
    in = out;
  }
}

Tensor cross_attention_layer(const Tensor& visual, const Tensor& language, const nn::ParamSet& params,
                             const MgmConfig& config, int layer, AttentionRecord* record, nn::StageCache* cache,
                             const std::string& slot) {
  const std::size_t d = static_cast<std::size_t>(config.d);
  if (visual.rank() != 2 || language.rank() != 2 || visual.dim(1) != d || language.dim(1) != d)
    fail(ErrorCode::ShapeMismatch, "cross attention expects [n x " + std::to_string(d) + "] and [L x " +
                                       std::to_string(d) + "], got " + nn::shape_string(visual.shape()) + " and " +
                                       nn::shape_string(language.shape()));
  if (language.dim(0) == 0) fail(ErrorCode::ShapeMismatch, "cross attention needs at least one language token");
  const std::string p = layer_prefix(layer);
  const Tensor& lqg = params.at(p + "ln_q.gamma");
  const Tensor& lqb = params.at(p + "ln_q.beta");
  const Tensor& lkg = params.at(p + "ln_kv.gamma");
  const Tensor& lkb = params.at(p + "ln_kv.beta");
  const Tensor& wq = params.at(p + "wq");
  const Tensor& wk = params.at(p + "wk");
  const Tensor& wv = params.at(p + "wv");
  const Tensor& w1 = params.at(p + "ffn.w1");
  const Tensor& b1 = params.at(p + "ffn.b1");
  const Tensor& w2 = params.at(p + "ffn.w2");
  const Tensor& b2 = params.at(p + "ffn.b2");

  const std::size_t heads = static_cast<std::size_t>(config.heads);
  const std::size_t dh = d / heads;
  const std::string key = slot + p;

  // Keys and values depend only on the language side; shared by every tile.
  const Tensor memory = nn::cached(cache, "mgm.kv." + p, {language, lkg, lkb},
                                   [&] { return nn::layer_norm(language, lkg, lkb); });
  const Tensor keys = nn::cached(cache, "mgm.k." + p, {memory, wk}, [&] { return nn::matmul(memory, wk); });
  const Tensor values = nn::cached(cache, "mgm.v." + p, {memory, wv}, [&] { return nn::matmul(memory, wv); });

  std::vector<Tensor> weights;
  const Tensor attended = nn::cached(cache, key + "attn", {visual, keys, values, lqg, lqb, wq}, [&] {
    const Tensor q = nn::matmul(nn::layer_norm(visual, lqg, lqb), wq);
    std::vector<Tensor> ctx;
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t b = h * dh, e = b + dh;
      const Tensor scores = nn::scale(nn::matmul_nt(nn::slice_cols(q, b, e), nn::slice_cols(keys, b, e)),
                                      1.0 / std::sqrt(static_cast<double>(dh)));
      const Tensor probs = nn::softmax(scores, 1);
      weights.push_back(probs);
      ctx.push_back(nn::matmul(probs, nn::slice_cols(values, b, e)));
    }
    return nn::add(visual, nn::concat_cols(ctx));
  });
  if (record) {
    if (record->weights.size() < static_cast<std::size_t>(layer)) record->weights.resize(static_cast<std::size_t>(layer));
    record->weights[static_cast<std::size_t>(layer - 1)] = weights;
  }
  return nn::cached(cache, key + "ffn", {attended, w1, b1, w2, b2}, [&] {
    const Tensor hidden = nn::relu(nn::add_row_bias(nn::matmul(attended, w1), b1));
    return nn::add(attended, nn::add_row_bias(nn::matmul(hidden, w2), b2));
  });
}

Tensor reorg_2d(const Tensor& tokens, std::size_t grid_h, std::size_t grid_w) {
  if (tokens.rank() != 2 || tokens.dim(0) != grid_h * grid_w)
    fail(ErrorCode::ShapeMismatch, "reorg_2d: " + nn::shape_string(tokens.shape()) + " does not fill a " +
                                       std::to_string(grid_h) + "x" + std::to_string(grid_w) + " grid");
  const std::size_t d = tokens.dim(1);
  const std::size_t n = grid_h * grid_w;
  std::vector<std::size_t> source(n * d);
  for (std::size_t c = 0; c < d; ++c)
    for (std::size_t i = 0; i < n; ++i) source[c * n + i] = i * d + c;
  return nn::permute(tokens, source, {d, grid_h, grid_w});
}

Tensor flatten_2d(const Tensor& feature_map) {
  if (feature_map.rank() != 3) fail(ErrorCode::ShapeMismatch, "flatten_2d expects [d x g_h x g_w]");
  const std::size_t d = feature_map.dim(0);
  const std::size_t n = feature_map.dim(1) * feature_map.dim(2);
  std::vector<std::size_t> source(n * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) source[i * d + c] = c * n + i;
  return nn::permute(feature_map, source, {n, d});
}

PredictedMask deconv_decode(const Tensor& feature_map, const nn::ParamSet& params, const MgmConfig& config,
                            int tile_side, nn::StageCache* cache, const std::string& slot) {
  if (feature_map.rank() != 3 || feature_map.dim(1) != feature_map.dim(2))
    fail(ErrorCode::ShapeMismatch, "deconv_decode expects a square [C x g x g] map");
  const int depth = decoder_depth(static_cast<int>(feature_map.dim(1)), tile_side);
  Tensor x = feature_map;
  for (int i = 1; i <= depth; ++i) {
    const Tensor& kernel = params.at(deconv_prefix(i) + "kernel");
    const Tensor& bias = params.at(deconv_prefix(i) + "bias");
    if (kernel.dim(0) != x.dim(0))
      fail(ErrorCode::ShapeMismatch, "deconv layer " + std::to_string(i) + " expects " + std::to_string(kernel.dim(0)) +
                                         " channels, got " + std::to_string(x.dim(0)));
    x = nn::cached(cache, slot + deconv_prefix(i), {x, kernel, bias}, [&] {
      const Tensor y = nn::add_channel_bias(nn::transposed_conv2d(x, kernel, config.stride, config.padding), bias);
      return i < depth ? nn::relu(y) : y;
    });
  }
  if (x.dim(0) != 1 || x.dim(1) != static_cast<std::size_t>(tile_side))
    fail(ErrorCode::ShapeMismatch, "decoder produced " + nn::shape_string(x.shape()));
  PredictedMask out;
  out.logits = nn::cached(cache, slot + "mgm.logits", {x}, [&] { return nn::reshape(x, {x.dim(1), x.dim(2)}); });
  out.probs = nn::cached(cache, slot + "mgm.probs", {out.logits}, [&] { return nn::sigmoid(out.logits); });
  return out;
}

MaskLoss mask_loss(const PredictedMask& pred, const BinaryMask& target) {
  const Tensor& p = pred.probs;
  if (p.rank() != 2 || p.dim(0) != static_cast<std::size_t>(target.rows()) ||
      p.dim(1) != static_cast<std::size_t>(target.cols()))
    fail(ErrorCode::ShapeMismatch, "mask_loss: prediction " + nn::shape_string(p.shape()) + " vs target " +
                                       std::to_string(target.rows()) + "x" + std::to_string(target.cols()));
  std::vector<double> g(target.values().begin(), target.values().end());
  MaskLoss loss;
  loss.dice = nn::dice_loss(p, g, 1.0);
  loss.ce = nn::binary_cross_entropy_with_logits(pred.logits, g, 1e-12);
  loss.total = nn::add(loss.dice, loss.ce);
  return loss;
}

MgmOutput mgm_forward(const Tensor& visual, const Tensor& language, const nn::ParamSet& params,
                      const MgmConfig& config, std::size_t grid_h, std::size_t grid_w, int tile_side,
                      nn::StageCache* cache, int tile) {
  if (visual.rank() != 2 || visual.dim(0) != grid_h * grid_w)
    fail(ErrorCode::ShapeMismatch, "mgm_forward: " + nn::shape_string(visual.shape()) + " visual states for a " +
                                       std::to_string(grid_h) + "x" + std::to_string(grid_w) + " grid");
  const std::string slot = "t" + std::to_string(tile) + ".";
  MgmOutput out;
  Tensor x = visual;
  for (int l = 1; l <= config.layers; ++l)
    x = cross_attention_layer(x, language, params, config, l, &out.attention, cache, slot);
  const Tensor map = nn::cached(cache, slot + "mgm.reorg", {x}, [&] { return reorg_2d(x, grid_h, grid_w); });
  out.mask = deconv_decode(map, params, config, tile_side, cache, slot);
  return out;
}

MgmOutput mgm_forward(const llm::LayerTap& tap, const nn::ParamSet& params, const MgmConfig& config,
                      std::size_t grid_h, std::size_t grid_w, int tile_side, nn::StageCache* cache) {
  const Tensor language = nn::cached(cache, "mgm.language", {tap.question, tap.answer}, [&] {
    const std::vector<Tensor> parts{tap.question, tap.answer};
    return nn::concat_rows(parts);
  });
  return mgm_forward(tap.visual, language, params, config, grid_h, grid_w, tile_side, cache, 0);
}

}  // namespace vqamask::mgm
