#include "vqamask/model.hpp"

#include "vqamask/error.hpp"
#include "vqamask/numerics/ops.hpp"

namespace vqamask::model {

using nn::Tensor;

void validate(const ModelConfig& c) {
  vision::validate(c.vision);
  llm::validate(c.llm);
  mgm::validate(c.mgm);
  if (c.vision.d != c.llm.d || c.mgm.d != c.llm.d)
    fail(ErrorCode::InvalidArgument, "vision, llm and mgm must share the embedding dim d");
  mgm::decoder_depth(c.vision.merged_grid(), c.vision.tile_side);
}

nn::ParamSet init_model(const ModelConfig& config, std::uint64_t seed) {
  validate(config);
  nn::ParamSet params;
  Rng vision_rng(seed);
  Rng llm_rng(seed ^ 0x9e3779b97f4a7c15ULL);
  Rng mgm_rng(seed ^ 0xc2b2ae3d27d4eb4fULL);
  vision::init_params(params, config.vision, vision_rng);
  llm::init_params(params, config.llm, llm_rng);
  mgm::init_params(params, config.mgm, config.vision.merged_grid(), config.vision.tile_side, mgm_rng);
  params.freeze_prefix("llm.");
  params.sync_requires_grad();
  return params;
}

PreparedSample prepare(const Sample& sample, const ModelConfig& config) {
  if (sample.mask.rows() != sample.image.height() || sample.mask.cols() != sample.image.width())
    fail(ErrorCode::ShapeMismatch, "mask dims differ from image dims");
  PreparedSample out;
  vision::SlicedImage sliced = vision::slice_image(sample.image, config.vision.max_tiles, config.vision.tile_side);
  out.layout = sliced.layout;
  out.tiles = std::move(sliced.tiles);
  out.tile_masks = vision::slice_mask(sample.mask, out.layout, config.vision.tile_side);
  const llm::CharTokenizer tokenizer;
  out.question_ids = tokenizer.encode(sample.question);
  out.answer_ids = tokenizer.encode(sample.answer);
  return out;
}

Tensor visual_tokens(const PreparedSample& sample, const nn::ParamSet& params, const ModelConfig& config,
                     nn::StageCache* cache) {
  std::vector<Tensor> per_tile;
  for (std::size_t t = 0; t < sample.tiles.size(); ++t)
    per_tile.push_back(vision::encode_tile(sample.tiles[t], config.vision, params, cache, static_cast<int>(t)));
  if (per_tile.size() == 1) return per_tile.front();
  return nn::cached(cache, "vision.stack", per_tile, [&] { return nn::concat_rows(per_tile); });
}

ForwardResult forward(const PreparedSample& sample, const nn::ParamSet& params, const ModelConfig& config,
                      double lambda, bool with_mgm, nn::StageCache* cache) {
  ForwardResult out;
  const Tensor visual = visual_tokens(sample, params, config, cache);
  out.llm = llm::llm_forward(visual, sample.question_ids, sample.answer_ids, params, config.llm, config.llm.tap, cache);
  out.loss_vqa = nn::cached(cache, "loss.vqa", {out.llm.logits},
                            [&] { return llm::vqa_loss(out.llm.logits, sample.answer_ids); });
  if (!with_mgm || lambda == 0.0) {
    out.total = out.loss_vqa;
    return out;
  }

  const llm::LayerTap& tap = out.llm.tap;
  const Tensor language = nn::cached(cache, "mgm.language", {tap.question, tap.answer}, [&] {
    const std::vector<Tensor> parts{tap.question, tap.answer};
    return nn::concat_rows(parts);
  });
  const std::size_t per_tile = static_cast<std::size_t>(config.vision.tokens_per_tile());
  const std::size_t grid = static_cast<std::size_t>(config.vision.merged_grid());
  std::vector<Tensor> losses;
  for (std::size_t t = 0; t < sample.tiles.size(); ++t) {
    const std::string slot = "mgm.query.t" + std::to_string(t);
    const Tensor query = sample.tiles.size() == 1
                             ? tap.visual
                             : nn::cached(cache, slot, {tap.visual}, [&] {
                                 return nn::slice_rows(tap.visual, t * per_tile, (t + 1) * per_tile);
                               });
    out.masks.push_back(mgm::mgm_forward(query, language, params, config.mgm, grid, grid, config.vision.tile_side,
                                         cache, static_cast<int>(t)));
    const mgm::PredictedMask& pred = out.masks.back().mask;
    losses.push_back(nn::cached(cache, "loss.mask.t" + std::to_string(t), {pred.probs},
                                [&] { return mgm::mask_loss(pred, sample.tile_masks[t]).total; }));
  }
  Tensor sum = losses.front();
  for (std::size_t t = 1; t < losses.size(); ++t) sum = nn::add(sum, losses[t]);
  out.loss_mask = nn::scale(sum, 1.0 / static_cast<double>(losses.size()));
  out.total = nn::add(out.loss_vqa, nn::scale(out.loss_mask, lambda));
  return out;
}

}  // namespace vqamask::model
