#include "vqamask/tinyllm.hpp"

#include <cmath>
#include <string>

#include "vqamask/error.hpp"
#include "vqamask/numerics/ops.hpp"

namespace vqamask::llm {

using nn::Tensor;

namespace {

std::string layer_prefix(int layer) { return "llm.layer" + std::to_string(layer) + "."; }

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

void validate(const LlmConfig& c) {
  if (c.layers < 1 || c.d < 1 || c.heads < 1 || c.ffn < 1 || c.vocab < 1)
    fail(ErrorCode::InvalidArgument, "llm settings must be positive");
  if (c.d % c.heads != 0) fail(ErrorCode::InvalidArgument, "llm d must be divisible by heads");
  if (c.tap < 1 || c.tap > c.layers)
    fail(ErrorCode::TapOutOfRange, "tap " + std::to_string(c.tap) + " outside [1, " + std::to_string(c.layers) + "]");
}

void init_params(nn::ParamSet& params, const LlmConfig& config, Rng& rng) {
  validate(config);
  const std::size_t d = static_cast<std::size_t>(config.d);
  const std::size_t ffn = static_cast<std::size_t>(config.ffn);
  const std::size_t vocab = static_cast<std::size_t>(config.vocab);
  const double proj = 1.0 / std::sqrt(static_cast<double>(d));
  params.add("llm.embed", gaussian(rng, {vocab, d}, 1.0));
  for (int k = 1; k <= config.layers; ++k) {
    const std::string p = layer_prefix(k);
    params.add(p + "ln1.gamma", filled({d}, 1.0));
    params.add(p + "ln1.beta", Tensor({d}));
    params.add(p + "attn.wq", gaussian(rng, {d, d}, proj));
    params.add(p + "attn.wk", gaussian(rng, {d, d}, proj));
    params.add(p + "attn.wv", gaussian(rng, {d, d}, proj));
    params.add(p + "attn.wo", gaussian(rng, {d, d}, proj));
    params.add(p + "ln2.gamma", filled({d}, 1.0));
    params.add(p + "ln2.beta", Tensor({d}));
    params.add(p + "ffn.w1", gaussian(rng, {d, ffn}, proj));
    params.add(p + "ffn.b1", Tensor({ffn}));
    params.add(p + "ffn.w2", gaussian(rng, {ffn, d}, 1.0 / std::sqrt(static_cast<double>(ffn))));
    params.add(p + "ffn.b2", Tensor({d}));
  }
  params.add("llm.final_ln.gamma", filled({d}, 1.0));
  params.add("llm.final_ln.beta", Tensor({d}));
  params.add("llm.head.weight", gaussian(rng, {d, vocab}, proj));
  params.add("llm.head.bias", Tensor({vocab}));
}

Tensor position_table(std::size_t length, std::size_t d) {
  Tensor table({length, d});
  auto v = table.mutable_values();
  for (std::size_t pos = 0; pos < length; ++pos)
    for (std::size_t i = 0; i < d; i += 2) {
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
      v[pos * d + i] = std::sin(angle);
      if (i + 1 < d) v[pos * d + i + 1] = std::cos(angle);
    }
  return table;
}

std::vector<std::uint8_t> causal_mask(std::size_t length) {
  std::vector<std::uint8_t> mask(length * length, 0);
  for (std::size_t i = 0; i < length; ++i)
    for (std::size_t j = 0; j <= i; ++j) mask[i * length + j] = 1;
  return mask;
}

Tensor embed_sequence(const Tensor& visual, std::span<const int> question, std::span<const int> answer,
                      const nn::ParamSet& params, nn::StageCache* cache) {
  const Tensor& table = params.at("llm.embed");
  const std::size_t d = table.dim(1);
  if (visual.rank() != 2 || visual.dim(1) != d)
    fail(ErrorCode::ShapeMismatch, "visual tokens " + nn::shape_string(visual.shape()) + " do not match llm dim " +
                                       std::to_string(d));
  return nn::cached(cache, "llm.embed", {visual, table}, [&] {
    std::vector<Tensor> parts{visual};
    if (!question.empty()) parts.push_back(nn::gather_rows(table, question));
    if (!answer.empty()) parts.push_back(nn::gather_rows(table, answer));
    const Tensor seq = nn::concat_rows(parts);
    return nn::add(seq, position_table(seq.dim(0), d));
  });
}

Tensor decoder_layer(const Tensor& x, const nn::ParamSet& params, const LlmConfig& config, int layer,
                     nn::StageCache* cache) {
  const std::string p = layer_prefix(layer);
  const Tensor& ln1g = params.at(p + "ln1.gamma");
  const Tensor& ln1b = params.at(p + "ln1.beta");
  const Tensor& wq = params.at(p + "attn.wq");
  const Tensor& wk = params.at(p + "attn.wk");
  const Tensor& wv = params.at(p + "attn.wv");
  const Tensor& wo = params.at(p + "attn.wo");
  const Tensor& ln2g = params.at(p + "ln2.gamma");
  const Tensor& ln2b = params.at(p + "ln2.beta");
  const Tensor& w1 = params.at(p + "ffn.w1");
  const Tensor& b1 = params.at(p + "ffn.b1");
  const Tensor& w2 = params.at(p + "ffn.w2");
  const Tensor& b2 = params.at(p + "ffn.b2");
  return nn::cached(cache, p + "out", {x, ln1g, ln1b, wq, wk, wv, wo, ln2g, ln2b, w1, b1, w2, b2}, [&] {
    const std::size_t d = x.dim(1);
    const std::size_t heads = static_cast<std::size_t>(config.heads);
    const std::size_t dh = d / heads;
    const Tensor h = nn::layer_norm(x, ln1g, ln1b);
    const Tensor q = nn::matmul(h, wq);
    const Tensor k = nn::matmul(h, wk);
    const Tensor v = nn::matmul(h, wv);
    std::vector<Tensor> ctx;
    for (std::size_t head = 0; head < heads; ++head) {
      const std::size_t b = head * dh, e = b + dh;
      const Tensor scores =
          nn::scale(nn::matmul_nt(nn::slice_cols(q, b, e), nn::slice_cols(k, b, e)), 1.0 / std::sqrt(double(dh)));
      ctx.push_back(nn::matmul(nn::causal_softmax(scores), nn::slice_cols(v, b, e)));
    }
    const Tensor attended = nn::add(x, nn::matmul(nn::concat_cols(ctx), wo));
    const Tensor g = nn::layer_norm(attended, ln2g, ln2b);
    const Tensor f = nn::add_row_bias(nn::matmul(nn::gelu(nn::add_row_bias(nn::matmul(g, w1), b1)), w2), b2);
    return nn::add(attended, f);
  });
}

Tensor lm_head(const Tensor& rows, const nn::ParamSet& params) {
  const Tensor normed = nn::layer_norm(rows, params.at("llm.final_ln.gamma"), params.at("llm.final_ln.beta"));
  return nn::add_row_bias(nn::matmul(normed, params.at("llm.head.weight")), params.at("llm.head.bias"));
}

LlmOutput llm_forward(const Tensor& visual, std::span<const int> question, std::span<const int> answer,
                      const nn::ParamSet& params, const LlmConfig& config, int tap_at, nn::StageCache* cache) {
  if (tap_at < 1 || tap_at > config.layers)
    fail(ErrorCode::TapOutOfRange,
         "tap " + std::to_string(tap_at) + " outside [1, " + std::to_string(config.layers) + "]");
  const SpanLayout spans{visual.rank() == 2 ? visual.dim(0) : 0, question.size(), answer.size()};
  if (spans.answer_begin() == 0 && !answer.empty())
    fail(ErrorCode::ShapeMismatch, "the first answer token needs a preceding position");

  LlmOutput out;
  out.hidden.push_back(embed_sequence(visual, question, answer, params, cache));
  for (int k = 1; k <= config.layers; ++k)
    out.hidden.push_back(decoder_layer(out.hidden.back(), params, config, k, cache));

  const Tensor& tapped = out.hidden[static_cast<std::size_t>(tap_at)];
  out.tap.layer = tap_at;
  auto span_of = [&](const char* slot, std::size_t begin, std::size_t end) {
    return nn::cached(cache, slot, {tapped}, [&] { return nn::slice_rows(tapped, begin, end); });
  };
  out.tap.visual = span_of("llm.tap.visual", 0, spans.question_begin());
  out.tap.question = span_of("llm.tap.question", spans.question_begin(), spans.answer_begin());
  out.tap.answer = span_of("llm.tap.answer", spans.answer_begin(), spans.total());

  if (!answer.empty()) {
    const Tensor& last = out.hidden.back();
    const std::size_t begin = spans.answer_begin() - 1;
    const std::size_t end = spans.total() - 1;
    out.logits = nn::cached(cache, "llm.logits", {last, params.at("llm.final_ln.gamma"), params.at("llm.final_ln.beta"),
                                                  params.at("llm.head.weight"), params.at("llm.head.bias")},
                            [&] { return lm_head(nn::slice_rows(last, begin, end), params); });
  }
  return out;
}

Tensor vqa_loss(const Tensor& logits, std::span<const int> answer_ids) {
  if (answer_ids.empty()) fail(ErrorCode::ShapeMismatch, "vqa_loss needs at least one answer token");
  if (logits.rank() != 2 || logits.dim(0) != answer_ids.size())
    fail(ErrorCode::ShapeMismatch, "logits " + nn::shape_string(logits.shape()) + " vs " +
                                       std::to_string(answer_ids.size()) + " answer ids");
  return nn::cross_entropy(logits, answer_ids);
}

}  // namespace vqamask::llm
