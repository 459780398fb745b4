#pragma once

// End-to-end runs shared by the command-line tool and the acceptance check:
// corpus assembly, language warm-up, stage-1 training, evaluation, and the
// files a run leaves behind.

#include <filesystem>
#include <string>
#include <vector>

#include "vqamask/io/config.hpp"
#include "vqamask/io/manifest.hpp"
#include "vqamask/numerics/grad_check.hpp"
#include "vqamask/trainer.hpp"

namespace vqamask::io {

/// Samples from manifest records: image, boxes, question, answer, and the mask
/// file named by each record (as written by genmask). Throws on the first
/// unreadable record.
std::vector<model::Sample> load_samples(const Manifest& manifest);

/// The manifest named by config.manifest, or the synthetic corpus.
std::vector<model::Sample> corpus_for(const RunConfig& config);

std::vector<model::PreparedSample> prepare_all(const std::vector<model::Sample>& samples,
                                               const model::ModelConfig& config);

/// Visual span length of a prepared sample.
std::size_t visual_length(const model::PreparedSample& sample, const model::ModelConfig& config);

struct RunResult {
  nn::ParamSet params;
  std::vector<double> pretrain_curve;
  trainer::TrainResult train;
  trainer::EvalReport before;  // after the language warm-up, before stage 1
  trainer::EvalReport after;
};

/// init_model -> pretrain_language -> evaluate -> train -> evaluate.
RunResult run_training(const RunConfig& config, const std::vector<model::PreparedSample>& corpus, int threads,
                       const trainer::StepCallback& on_step = {});

/// Deterministic JSON text: summary plus one row per sample.
std::string eval_json(const trainer::EvalReport& report);

/// Writes model.ckpt (metadata = effective config), alphabet.json, config.json,
/// pretrain_loss.csv, loss.csv and eval.json into `dir`. Throws WriteFailure.
void write_run(const std::filesystem::path& dir, const RunConfig& config, const RunResult& result);

/// Gradient check of L_vqa + λ·L_mask over the trainable set at random init
/// (LLM frozen), on the first sample of a two-sample synthetic corpus.
nn::GradCheckReport full_model_grad_check(const model::ModelConfig& config, std::uint64_t init_seed,
                                          std::uint64_t sample_seed, double lambda,
                                          const nn::GradCheckOptions& options = {});

/// Rebuilds the run configuration stored in a checkpoint's metadata.
RunConfig config_from_metadata(const std::string& metadata);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace vqamask::io
