#pragma once

// Stage-1 alignment at toy scale: synthetic corpus, SGD with two learning-rate
// groups over the non-frozen parameters, and mask IoU / VQA loss evaluation.

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "vqamask/model.hpp"

namespace vqamask::trainer {

struct TrainConfig {
  int steps = 500;
  int batch = 8;
  double lr_mgm = 2e-4;
  double lr_rest = 2e-5;
  double lr_scale = 250.0;  // global multiplier on both groups
  double momentum = 0.9;
  double lambda = 1.0;
  std::uint64_t seed = 7;       // batch order
  std::uint64_t init_seed = 1;  // parameter init
  std::vector<std::string> freeze{"llm."};
};

void validate(const TrainConfig& config);

/// Synthetic documents: light background (220±5) with 1–3 dark (30±5) glyph
/// lines, each in its own horizontal band of four; the answer lists the
/// occupied band digits top to bottom and the mask is the exact line stencil.
std::vector<model::Sample> synth_corpus(int count, int canvas, std::uint64_t seed);

/// Question templates of the six parsing tasks.
const std::vector<std::string>& question_templates();

/// Momentum SGD; each parameter uses the rate of its group.
class Sgd {
 public:
  Sgd(const TrainConfig& config) : config_(config) {}
  double rate_for(const std::string& name) const;
  /// θ ← θ − lr·v with v ← μ·v + g; frozen entries are never written.
  void step(nn::ParamSet& params, double grad_scale);

 private:
  TrainConfig config_;
  std::map<std::string, std::vector<double>, std::less<>> velocity_;
};

struct PretrainConfig {
  int steps = 0;
  int batch = 8;
  double lr = 0.05;
  double momentum = 0.9;
  std::uint64_t seed = 5;
};

/// Text-only warm-up of the language model, standing in for the pretrained
/// weights the aligned model keeps frozen. The visual span carries character
/// embeddings of a random document in reading order: each line's band digit
/// fills a short run inside its quarter of the span, spaces fill the rest, and
/// the answer lists the digits. Only "llm." entries change; the freeze set is
/// restored afterwards. Returns the mean batch loss per step.
std::vector<double> pretrain_language(nn::ParamSet& params, const llm::LlmConfig& config,
                                      std::size_t visual_length, const PretrainConfig& pretrain);

struct StepLosses {
  double vqa = 0.0;
  double mask = 0.0;
  double total = 0.0;
};

/// One update over the batch (gradients averaged). Throws NaNLoss naming the
/// offending sample.
StepLosses train_step(std::span<const model::PreparedSample* const> batch, nn::ParamSet& params,
                      const model::ModelConfig& model_config, const TrainConfig& config, Sgd& optimizer);

/// IoU of (probs > threshold) against target; two empty masks count as 1.
double mask_iou(const nn::Tensor& probs, const BinaryMask& target, double threshold);

struct EvalRow {
  std::size_t index = 0;
  double iou = 0.0;       // mean over tiles
  double loss_vqa = 0.0;
};

struct EvalReport {
  double mean_iou = 0.0;
  double mean_vqa = 0.0;
  std::vector<EvalRow> rows;
};

/// Tape-free evaluation, parallel across samples; results do not depend on `threads`.
EvalReport evaluate(std::span<const model::PreparedSample> corpus, const nn::ParamSet& params,
                    const model::ModelConfig& model_config, double threshold = 0.5, int threads = 1);

struct TrainResult {
  std::vector<StepLosses> curve;  // entry s is the batch loss at step s, before its update
};

using StepCallback = std::function<void(int step, const StepLosses&)>;

/// Applies config.freeze, then runs config.steps updates over batches drawn
/// from per-epoch shuffles of the corpus.
TrainResult train(std::span<const model::PreparedSample> corpus, nn::ParamSet& params,
                  const model::ModelConfig& model_config, const TrainConfig& config,
                  const StepCallback& on_step = {});

/// Mask probe on frozen features: a clone of `trained` gets its "mgm." entries
/// reset to the config.init_seed initialization, every other entry frozen, and
/// the MGM alone trained with the schedule of `config` at λ = 1. Returns the
/// evaluation of the probed model.
EvalReport probe_mask_head(std::span<const model::PreparedSample> corpus, const nn::ParamSet& trained,
                           const model::ModelConfig& model_config, const TrainConfig& config, double threshold = 0.5,
                           int threads = 1);

/// "step,loss_vqa,loss_mask,loss_total" rows with round-trip precision.
std::string loss_table(const std::vector<StepLosses>& curve);

}  // namespace vqamask::trainer
