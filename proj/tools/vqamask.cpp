// vqamask: mask factory, stage-1 training, evaluation, gradient check and
// overlay rendering. Exit codes: 0 success, 1 validation failure, 2 runtime failure.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "vqamask/error.hpp"
#include "vqamask/io/checkpoint.hpp"
#include "vqamask/io/config.hpp"
#include "vqamask/io/manifest.hpp"
#include "vqamask/io/netpbm.hpp"
#include "vqamask/io/pipeline.hpp"
#include "vqamask/io/render.hpp"
#include "vqamask/io/session.hpp"

using namespace vqamask;

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kRuntime = 2;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonDeterministicLoss:
    case ErrorCode::NaNLoss:
    case ErrorCode::Unreadable:
    case ErrorCode::WriteFailure:
      return kRuntime;
    default:
      return kValidation;
  }
}

int exit_code_for(const std::string& error_name) {
  return error_name == "NonDeterministicLoss" || error_name == "NaNLoss" || error_name == "Unreadable" ||
                 error_name == "WriteFailure" || error_name == "RuntimeError"
             ? kRuntime
             : kValidation;
}

// Flags left unset do not override the config file.
struct TrainOverrides {
  std::optional<int> steps, batch, pretrain_steps;
  std::optional<double> lambda, lr_scale, threshold;
  std::optional<std::uint64_t> seed, init_seed;
  std::optional<std::string> manifest;

  void apply(io::RunConfig& c) const {
    if (steps) c.train.steps = *steps;
    if (batch) c.train.batch = *batch;
    if (pretrain_steps) c.pretrain.steps = *pretrain_steps;
    if (lambda) c.train.lambda = *lambda;
    if (lr_scale) c.train.lr_scale = *lr_scale;
    if (threshold) c.threshold = *threshold;
    if (seed) c.train.seed = *seed;
    if (init_seed) c.train.init_seed = *init_seed;
    if (manifest) c.manifest = *manifest;
  }
};

int cmd_genmask(const std::string& manifest_path, int threads, std::uint64_t seed, bool strict) {
  const io::Manifest manifest = io::load_manifest(manifest_path, strict);
  for (const auto& d : manifest.diagnostics)
    std::cerr << manifest_path << ":" << d.line << ": MalformedRecord: " << d.message << '\n';
  const io::GenmaskReport report = io::run_genmask(manifest, seed, threads);
  io::log_failures(report, std::cerr);
  std::size_t inverted = 0, degenerate = 0;
  for (const auto& r : report.records) {
    inverted += static_cast<std::size_t>(r.inverted);
    degenerate += static_cast<std::size_t>(r.degenerate);
  }
  std::printf("records %zu ok %zu failed %zu malformed %zu instances_inverted %zu instances_degenerate %zu\n",
              manifest.records.size(), manifest.records.size() - report.failures, report.failures,
              manifest.diagnostics.size(), inverted, degenerate);
  int code = manifest.diagnostics.empty() ? kOk : kValidation;
  for (const auto& r : report.records)
    if (!r.ok) code = std::max(code, exit_code_for(r.error));
  return code;
}

int cmd_synth(const std::string& out_dir, int count, int canvas, std::uint64_t seed, bool invert) {
  const std::filesystem::path dir(out_dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::WriteFailure, out_dir + ": " + ec.message());
  const auto corpus = trainer::synth_corpus(count, canvas, seed);
  std::vector<io::ManifestRecord> records;
  char name[64];
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    Image image = corpus[i].image;
    if (invert)
      for (auto& p : image.pixels()) p = static_cast<std::uint8_t>(255 - p);
    std::snprintf(name, sizeof name, "%05zu", i);
    const std::string stem(name);
    io::write_image(dir / ("image_" + stem + ".pgm"), image);
    io::write_mask(dir / ("truth_" + stem + ".pgm"), corpus[i].mask);
    io::ManifestRecord r;
    r.image = "image_" + stem + ".pgm";
    r.boxes = corpus[i].boxes;
    r.mask = "mask_" + stem + ".pgm";
    r.question = corpus[i].question;
    r.answer = corpus[i].answer;
    records.push_back(std::move(r));
  }
  io::write_manifest(dir / "manifest.jsonl", records);
  std::printf("wrote %zu samples to %s\n", corpus.size(), out_dir.c_str());
  return kOk;
}

io::RunConfig resolve_config(const std::string& config_path, const TrainOverrides& overrides) {
  io::RunConfig config = config_path.empty() ? io::RunConfig{} : io::load_config(config_path);
  overrides.apply(config);
  model::validate(config.model);
  trainer::validate(config.train);
  return config;
}

int cmd_train(const std::string& config_path, const std::string& out_dir, int threads,
              const TrainOverrides& overrides, bool quiet) {
  const io::RunConfig config = resolve_config(config_path, overrides);
  const auto corpus = io::prepare_all(io::corpus_for(config), config.model);
  const auto start = std::chrono::steady_clock::now();
  const int every = std::max(1, config.train.steps / 20);
  const io::RunResult result = io::run_training(config, corpus, threads, [&](int step, const trainer::StepLosses& l) {
    if (!quiet && (step % every == 0 || step + 1 == config.train.steps))
      std::fprintf(stderr, "step %d loss_vqa %.5f loss_mask %.5f\n", step, l.vqa, l.mask);
  });
  io::write_run(out_dir, config, result);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::printf("samples %zu steps %d mean_iou %.4f loss_vqa %.4f -> %.4f (%.1f%% lower) seconds %.1f\n",
              corpus.size(), config.train.steps, result.after.mean_iou, result.before.mean_vqa,
              result.after.mean_vqa, 100.0 * (1.0 - result.after.mean_vqa / result.before.mean_vqa), secs);
  return kOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& manifest_path, int threads,
             std::optional<double> threshold, const std::string& out_path) {
  const io::Checkpoint ckpt = io::load_checkpoint(ckpt_path);
  io::RunConfig config = io::config_from_metadata(ckpt.metadata);
  if (threshold) config.threshold = *threshold;
  const auto samples = io::load_samples(io::load_manifest(manifest_path, true));
  const auto corpus = io::prepare_all(samples, config.model);
  const trainer::EvalReport report = trainer::evaluate(corpus, ckpt.params, config.model, config.threshold, threads);
  const std::string text = io::eval_json(report);
  if (out_path.empty())
    std::cout << text;
  else
    io::write_text(out_path, text);
  std::fprintf(stderr, "samples %zu mean_iou %.4f mean_loss_vqa %.4f\n", report.rows.size(), report.mean_iou,
               report.mean_vqa);
  return kOk;
}

int cmd_gradcheck(const std::string& config_path, double step, double tolerance, std::uint64_t sample_seed,
                  const TrainOverrides& overrides) {
  const io::RunConfig config = resolve_config(config_path, overrides);
  nn::GradCheckOptions options;
  options.step = step;
  options.tolerance = tolerance;
  const auto start = std::chrono::steady_clock::now();
  const nn::GradCheckReport report = io::full_model_grad_check(config.model, config.train.init_seed, sample_seed,
                                                               config.train.lambda, options);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::printf("%-32s %8s %12s %13s %13s\n", "parameter", "scalars", "max_error", "analytic", "numeric");
  for (const auto& p : report.params)
    std::printf("%-32s %8zu %12.3e %13.6e %13.6e\n", p.name.c_str(), p.count, p.max_error, p.analytic, p.numeric);
  std::printf("scalars %zu max_error %.3e tolerance %.1e seconds %.1f %s\n", report.scalars_checked,
              report.max_error, report.tolerance, secs, report.passed() ? "PASS" : "FAIL");
  return report.passed() ? kOk : kValidation;
}

struct RenderArgs {
  std::string ckpt, image, out, mode = "mask", question = "Read all.", answer;
  int layer = 0, head = 0;
  std::optional<std::size_t> key_begin, key_end;
};

int cmd_render(const RenderArgs& a) {
  const io::Checkpoint ckpt = io::load_checkpoint(a.ckpt);
  const io::RunConfig config = io::config_from_metadata(ckpt.metadata);
  model::Sample sample;
  sample.image = io::read_image(a.image);
  sample.mask = BinaryMask(sample.image.height(), sample.image.width(), 0);
  sample.question = a.question;
  sample.answer = a.answer;
  const model::PreparedSample prepared = model::prepare(sample, config.model);
  const model::ForwardResult r = model::forward(prepared, ckpt.params, config.model, 1.0, true);

  std::vector<io::Heatmap> tiles;
  if (a.mode == "mask") {
    const int side = config.model.vision.tile_side;
    for (const auto& m : r.masks) {
      io::Heatmap map(side, side, 0.0);
      const auto probs = m.mask.probs.values();
      std::copy(probs.begin(), probs.end(), map.values().begin());
      tiles.push_back(std::move(map));
    }
  } else {
    const std::size_t q = prepared.question_ids.size();
    const std::size_t key_begin = a.key_begin.value_or(q);
    const std::size_t key_end = a.key_end.value_or(q + prepared.answer_ids.size());
    const int grid = config.model.vision.merged_grid();
    for (const auto& m : r.masks)
      tiles.push_back(io::attention_heatmap(m.attention, static_cast<std::size_t>(a.layer),
                                            static_cast<std::size_t>(a.head), key_begin, key_end, grid, grid));
  }
  const io::Heatmap joined = io::stitch_tiles(tiles, prepared.layout);
  io::render_overlay(sample.image,
                     io::upsample_nearest(joined, sample.image.height(), sample.image.width()), a.out);
  std::printf("wrote %s\n", a.out.c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Text-mask reference: mask factory, stage-1 training and checks"};
  app.require_subcommand(1);
  const int env_threads = io::default_threads();

  std::string manifest, out, config_path, ckpt;
  int threads = env_threads;
  std::uint64_t seed = 0;
  bool strict = false, quiet = false, invert = false;
  int count = 200, canvas = 64;
  double step = 1e-5, tolerance = 1e-5;
  std::uint64_t sample_seed = 11;
  std::optional<double> threshold;
  TrainOverrides overrides;
  RenderArgs render;

  auto* genmask = app.add_subcommand("genmask", "Write a mask for every manifest record");
  genmask->add_option("--manifest", manifest, "Line-delimited JSON manifest")->required();
  genmask->add_option("--threads", threads, "Worker threads (default: VQAMASK_THREADS or 1)")
      ->check(CLI::PositiveNumber);
  genmask->add_option("--seed", seed, "Mask factory seed");
  genmask->add_flag("--strict", strict, "Fail on the first malformed manifest line");

  auto* synth = app.add_subcommand("synth", "Write a synthetic corpus and its manifest");
  synth->add_option("--out", out, "Output directory")->required();
  synth->add_option("--count", count, "Number of samples")->check(CLI::PositiveNumber);
  synth->add_option("--canvas", canvas, "Image side in pixels");
  synth->add_option("--seed", seed, "Corpus seed");
  synth->add_flag("--invert", invert, "Light text on a dark background");

  auto add_overrides = [&](CLI::App* sub) {
    sub->add_option("--steps", overrides.steps, "Training steps");
    sub->add_option("--batch", overrides.batch, "Batch size");
    sub->add_option("--lambda", overrides.lambda, "Mask loss weight");
    sub->add_option("--lr-scale", overrides.lr_scale, "Global learning-rate multiplier");
    sub->add_option("--seed", overrides.seed, "Batch-order seed");
    sub->add_option("--init-seed", overrides.init_seed, "Parameter init seed");
    sub->add_option("--pretrain-steps", overrides.pretrain_steps, "Language warm-up steps");
  };

  auto* train = app.add_subcommand("train", "Stage-1 training; writes checkpoint, loss tables and report");
  train->add_option("--config", config_path, "Flat JSON run configuration")->check(CLI::ExistingFile);
  train->add_option("--out", out, "Output directory")->required();
  train->add_option("--threads", threads, "Evaluation threads")->check(CLI::PositiveNumber);
  train->add_option("--manifest", overrides.manifest, "Training manifest (masks from genmask)");
  train->add_option("--threshold", overrides.threshold, "IoU threshold");
  train->add_flag("--quiet", quiet, "No per-step progress");
  add_overrides(train);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest");
  eval->add_option("--ckpt", ckpt, "Checkpoint")->required();
  eval->add_option("--manifest", manifest, "Manifest with masks")->required();
  eval->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
  eval->add_option("--threshold", threshold, "IoU threshold");
  eval->add_option("--out", out, "Write the JSON report here instead of stdout");

  auto* gradcheck = app.add_subcommand("gradcheck", "Central-difference check of the joint objective");
  gradcheck->add_option("--config", config_path, "Flat JSON run configuration")->check(CLI::ExistingFile);
  gradcheck->add_option("--step", step, "Perturbation step");
  gradcheck->add_option("--tolerance", tolerance, "Pass bound on the max error");
  gradcheck->add_option("--sample-seed", sample_seed, "Synthetic sample seed");
  gradcheck->add_option("--lambda", overrides.lambda, "Mask loss weight");
  gradcheck->add_option("--init-seed", overrides.init_seed, "Parameter init seed");

  auto* rend = app.add_subcommand("render", "Overlay a predicted mask or MGM attention on an image");
  rend->add_option("--ckpt", render.ckpt, "Checkpoint")->required();
  rend->add_option("--image", render.image, "Input image (PGM/PPM)")->required();
  rend->add_option("--out", render.out, "Output PPM")->required();
  rend->add_option("--mode", render.mode, "mask or attention")->check(CLI::IsMember({"mask", "attention"}));
  rend->add_option("--question", render.question, "Question text");
  rend->add_option("--answer", render.answer, "Answer text fed to the model");
  rend->add_option("--layer", render.layer, "MGM layer (attention mode)");
  rend->add_option("--head", render.head, "MGM head (attention mode)");
  rend->add_option("--key-begin", render.key_begin, "First language key (default: answer start)");
  rend->add_option("--key-end", render.key_end, "End of the key range (default: answer end)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (*genmask) return cmd_genmask(manifest, threads, seed, strict);
    if (*synth) return cmd_synth(out, count, canvas, seed, invert);
    if (*train) return cmd_train(config_path, out, threads, overrides, quiet);
    if (*eval) return cmd_eval(ckpt, manifest, threads, threshold, out);
    if (*gradcheck) return cmd_gradcheck(config_path, step, tolerance, sample_seed, overrides);
    if (*rend) return cmd_render(render);
  } catch (const Error& e) {
    std::cerr << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "RuntimeError: " << e.what() << '\n';
    return kRuntime;
  }
  return kValidation;
}
