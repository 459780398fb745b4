#include "vqamask/io/session.hpp"

#include <cstdio>
#include <fstream>

#include "json.hpp"
#include "vqamask/error.hpp"
#include "vqamask/io/checkpoint.hpp"
#include "vqamask/io/netpbm.hpp"
#include "vqamask/numerics/stage_cache.hpp"
#include "vqamask/tokenizer.hpp"

namespace vqamask::io {

std::vector<model::Sample> load_samples(const Manifest& manifest) {
  std::vector<model::Sample> samples;
  samples.reserve(manifest.records.size());
  for (const auto& r : manifest.records) {
    if (r.mask.empty())
      fail(ErrorCode::MalformedRecord, manifest.source.string() + ":" + std::to_string(r.line) + ": no mask path");
    model::Sample s;
    s.image = read_image(manifest.resolve(r.image));
    s.mask = read_mask(manifest.resolve(r.mask));
    s.boxes = r.boxes;
    s.question = r.question;
    s.answer = r.answer;
    samples.push_back(std::move(s));
  }
  return samples;
}

std::vector<model::Sample> corpus_for(const RunConfig& config) {
  if (!config.manifest.empty()) return load_samples(load_manifest(config.manifest, true));
  return trainer::synth_corpus(config.corpus_count, config.corpus_canvas, config.corpus_seed);
}

std::vector<model::PreparedSample> prepare_all(const std::vector<model::Sample>& samples,
                                               const model::ModelConfig& config) {
  std::vector<model::PreparedSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(model::prepare(s, config));
  return out;
}

std::size_t visual_length(const model::PreparedSample& sample, const model::ModelConfig& config) {
  return sample.tiles.size() * static_cast<std::size_t>(config.vision.tokens_per_tile());
}

RunResult run_training(const RunConfig& config, const std::vector<model::PreparedSample>& corpus, int threads,
                       const trainer::StepCallback& on_step) {
  if (corpus.empty()) fail(ErrorCode::InvalidArgument, "empty training corpus");
  RunResult result{model::init_model(config.model, config.train.init_seed), {}, {}, {}, {}};
  result.pretrain_curve =
      trainer::pretrain_language(result.params, config.model.llm, visual_length(corpus.front(), config.model),
                                 config.pretrain);
  result.before = trainer::evaluate(corpus, result.params, config.model, config.threshold, threads);
  result.train = trainer::train(corpus, result.params, config.model, config.train, on_step);
  result.after = trainer::evaluate(corpus, result.params, config.model, config.threshold, threads);
  return result;
}

std::string eval_json(const trainer::EvalReport& report) {
  nlohmann::ordered_json j;
  j["samples"] = report.rows.size();
  j["mean_iou"] = report.mean_iou;
  j["mean_loss_vqa"] = report.mean_vqa;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& r : report.rows) rows.push_back({{"index", r.index}, {"iou", r.iou}, {"loss_vqa", r.loss_vqa}});
  j["rows"] = std::move(rows);
  return j.dump(2) + "\n";
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::WriteFailure, path.string() + ": cannot open for writing");
  out << text;
  out.flush();
  if (!out) fail(ErrorCode::WriteFailure, path.string() + ": write failed");
}

void write_run(const std::filesystem::path& dir, const RunConfig& config, const RunResult& result) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::WriteFailure, dir.string() + ": " + ec.message());
  const std::string config_text = to_json(config);
  save_checkpoint(dir / "model.ckpt", result.params, config_text);
  write_text(dir / "config.json", config_text + "\n");
  write_text(dir / "alphabet.json", llm::CharTokenizer().to_json() + "\n");

  std::string pre = "step,loss\n";
  char line[64];
  for (std::size_t s = 0; s < result.pretrain_curve.size(); ++s) {
    std::snprintf(line, sizeof line, "%zu,%.17g\n", s, result.pretrain_curve[s]);
    pre += line;
  }
  write_text(dir / "pretrain_loss.csv", pre);
  write_text(dir / "loss.csv", trainer::loss_table(result.train.curve));

  nlohmann::ordered_json j;
  j["before"] = nlohmann::ordered_json::parse(eval_json(result.before));
  j["after"] = nlohmann::ordered_json::parse(eval_json(result.after));
  const double drop = result.before.mean_vqa > 0.0 ? 1.0 - result.after.mean_vqa / result.before.mean_vqa : 0.0;
  j["loss_vqa_reduction"] = drop;
  write_text(dir / "eval.json", j.dump(2) + "\n");
}

nn::GradCheckReport full_model_grad_check(const model::ModelConfig& config, std::uint64_t init_seed,
                                          std::uint64_t sample_seed, double lambda,
                                          const nn::GradCheckOptions& options) {
  const auto corpus = trainer::synth_corpus(2, config.vision.tile_side, sample_seed);
  const model::PreparedSample sample = model::prepare(corpus.front(), config);
  nn::ParamSet params = model::init_model(config, init_seed);
  nn::StageCache cache;
  const auto loss = [&](const nn::ParamSet& p) { return model::forward(sample, p, config, lambda, true, &cache).total; };
  return nn::grad_check(loss, params, options);
}

RunConfig config_from_metadata(const std::string& metadata) {
  RunConfig config;
  apply_json(config, metadata);
  return config;
}

}  // namespace vqamask::io
