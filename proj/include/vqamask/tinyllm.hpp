#pragma once

// Minimal pre-norm causal decoder standing in for the language model. Visual
// tokens enter as embeddings ahead of the question and answer token ids; the
// hidden states of one chosen layer are exposed for the mask generator.

#include <span>
#include <vector>

#include "vqamask/numerics/param_set.hpp"
#include "vqamask/numerics/stage_cache.hpp"
#include "vqamask/rng.hpp"

namespace vqamask::llm {

struct LlmConfig {
  int layers = 4;
  int d = 32;
  int heads = 2;
  int ffn = 64;
  int vocab = 98;
  int tap = 2;  // layer whose output feeds the mask generator, in [1, layers]
};

void validate(const LlmConfig& config);

/// Contiguous role spans of the concatenated sequence: V, then Q, then A.
struct SpanLayout {
  std::size_t visual = 0;
  std::size_t question = 0;
  std::size_t answer = 0;

  std::size_t total() const { return visual + question + answer; }
  std::size_t question_begin() const { return visual; }
  std::size_t answer_begin() const { return visual + question; }
};

/// Hidden states of one layer split by role.
struct LayerTap {
  int layer = 0;
  nn::Tensor visual;    // [n × d]
  nn::Tensor question;  // [l × d]
  nn::Tensor answer;    // [m × d]
};

struct LlmOutput {
  nn::Tensor logits;                  // [m × vocab]; row i predicts answer id i
  LayerTap tap;
  std::vector<nn::Tensor> hidden;     // hidden[k] = output of layer k, hidden[0] = input embeddings
};

/// Registers llm.* parameters.
void init_params(nn::ParamSet& params, const LlmConfig& config, Rng& rng);

/// Fixed sinusoidal position table [length × d].
nn::Tensor position_table(std::size_t length, std::size_t d);

/// Entry (i, j) is 1 iff position i may attend to position j (j <= i).
std::vector<std::uint8_t> causal_mask(std::size_t length);

/// [visual; embed(question); embed(answer)] + position table.
nn::Tensor embed_sequence(const nn::Tensor& visual, std::span<const int> question, std::span<const int> answer,
                          const nn::ParamSet& params, nn::StageCache* cache = nullptr);

/// x + Attn(LN1(x)) then + FFN(LN2(.)); layer is 1-based.
nn::Tensor decoder_layer(const nn::Tensor& x, const nn::ParamSet& params, const LlmConfig& config, int layer,
                         nn::StageCache* cache = nullptr);

/// Final norm and vocabulary projection of the given rows.
nn::Tensor lm_head(const nn::Tensor& rows, const nn::ParamSet& params);

/// Runs all layers; logits cover the answer span with teacher forcing: the row
/// predicting answer token i is read at sequence position answer_begin + i − 1.
/// Throws TapOutOfRange unless 1 <= tap_at <= layers.
LlmOutput llm_forward(const nn::Tensor& visual, std::span<const int> question, std::span<const int> answer,
                      const nn::ParamSet& params, const LlmConfig& config, int tap_at,
                      nn::StageCache* cache = nullptr);

/// Mean over answer positions of −log softmax(logits)[target].
nn::Tensor vqa_loss(const nn::Tensor& logits, std::span<const int> answer_ids);

}  // namespace vqamask::llm
