#include "vqamask/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <thread>

#include "vqamask/error.hpp"
#include "vqamask/numerics/tape.hpp"
#include "vqamask/tokenizer.hpp"

namespace vqamask::trainer {

using nn::Tensor;

void validate(const TrainConfig& c) {
  if (c.steps < 0) fail(ErrorCode::InvalidArgument, "steps must be >= 0");
  if (c.batch < 1) fail(ErrorCode::InvalidArgument, "batch must be >= 1");
  if (!(c.lr_mgm > 0.0) || !(c.lr_rest > 0.0) || !(c.lr_scale > 0.0))
    fail(ErrorCode::InvalidArgument, "learning rates must be > 0");
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) fail(ErrorCode::InvalidArgument, "momentum must be in [0, 1)");
  if (!(c.lambda >= 0.0) || !std::isfinite(c.lambda)) fail(ErrorCode::InvalidArgument, "lambda must be >= 0");
}

const std::vector<std::string>& question_templates() {
  static const std::vector<std::string> templates{"Read all.",   "Recognize.", "Locate text.",
                                                  "To markdown.", "To LaTeX.",  "To CSV."};
  return templates;
}

std::vector<model::Sample> synth_corpus(int count, int canvas, std::uint64_t seed) {
  if (count < 1) fail(ErrorCode::InvalidArgument, "corpus count must be >= 1");
  if (canvas < 32 || canvas % 4 != 0) fail(ErrorCode::InvalidArgument, "canvas must be a multiple of 4, >= 32");
  constexpr int kBands = 4;
  const int band = canvas / kBands;
  Rng rng(seed);
  std::vector<model::Sample> corpus;
  corpus.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    model::Sample s;
    s.image = Image(canvas, canvas, 1);
    for (auto& p : s.image.pixels()) p = static_cast<std::uint8_t>(220 + rng.range(-5, 5));
    s.mask = BinaryMask(canvas, canvas, 0);

    std::vector<int> bands(kBands);
    std::iota(bands.begin(), bands.end(), 0);
    for (int j = kBands - 1; j > 0; --j) std::swap(bands[j], bands[rng.below(static_cast<std::uint64_t>(j + 1))]);
    const int lines = rng.range(1, 3);
    bands.resize(static_cast<std::size_t>(lines));
    std::sort(bands.begin(), bands.end());

    for (int b : bands) {
      const int h = rng.range(band * 3 / 8, band * 5 / 8);
      const int y0 = b * band + rng.range(2, band - 2 - h);
      const int x0 = rng.range(2, canvas / 3);
      const int w = rng.range(canvas / 4, std::min(canvas * 5 / 8, canvas - 2 - x0));
      for (int y = y0; y < y0 + h; ++y)
        for (int x = x0; x < x0 + w; ++x) {
          s.image.at(y, x) = static_cast<std::uint8_t>(30 + rng.range(-5, 5));
          s.mask(y, x) = 1;
        }
      s.boxes.push_back({std::max(0, x0 - 2), std::max(0, y0 - 2), std::min(canvas, x0 + w + 2),
                         std::min(canvas, y0 + h + 2)});
      s.answer.push_back(static_cast<char>('0' + b));
    }
    s.question = question_templates()[rng.below(question_templates().size())];
    corpus.push_back(std::move(s));
  }
  return corpus;
}

double Sgd::rate_for(const std::string& name) const {
  const bool mgm = name.rfind("mgm.", 0) == 0;
  return (mgm ? config_.lr_mgm : config_.lr_rest) * config_.lr_scale;
}

void Sgd::step(nn::ParamSet& params, double grad_scale) {
  for (const auto& [name, tensor] : params.entries()) {
    if (params.is_frozen(name) || !tensor.has_grad()) continue;
    const auto grad = tensor.grad();
    auto& v = velocity_[name];
    if (v.empty()) v.assign(grad.size(), 0.0);
    const double lr = rate_for(name);
    auto values = params.at(name).mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      v[i] = config_.momentum * v[i] + grad_scale * grad[i];
      values[i] -= lr * v[i];
    }
  }
}

std::vector<double> pretrain_language(nn::ParamSet& params, const llm::LlmConfig& config,
                                      std::size_t visual_length, const PretrainConfig& pc) {
  if (pc.steps < 0 || pc.batch < 1 || !(pc.lr > 0.0) || !(pc.momentum >= 0.0 && pc.momentum < 1.0))
    fail(ErrorCode::InvalidArgument, "invalid pretraining settings");
  if (visual_length < 4) fail(ErrorCode::InvalidArgument, "visual span must hold at least 4 tokens");
  llm::validate(config);
  const auto saved_frozen = params.frozen();
  for (const auto& name : params.names()) params.freeze(name);
  params.freeze_prefix("llm.", false);
  params.sync_requires_grad();

  TrainConfig rates;
  rates.lr_mgm = rates.lr_rest = pc.lr;
  rates.lr_scale = 1.0;
  rates.momentum = pc.momentum;
  Sgd optimizer(rates);
  const llm::CharTokenizer tokenizer;
  const std::size_t d = static_cast<std::size_t>(config.d);
  const std::size_t quarter = visual_length / 4;
  Rng rng(pc.seed);
  std::vector<double> curve;
  for (int step = 0; step < pc.steps; ++step) {
    params.zero_grad();
    double sum = 0.0;
    for (int i = 0; i < pc.batch; ++i) {
      std::vector<int> slots(visual_length, tokenizer.id_of(' '));
      std::vector<int> bands{0, 1, 2, 3};
      for (int j = 3; j > 0; --j) std::swap(bands[j], bands[rng.below(static_cast<std::uint64_t>(j + 1))]);
      bands.resize(static_cast<std::size_t>(rng.range(1, 3)));
      std::sort(bands.begin(), bands.end());
      std::string answer;
      for (int b : bands) {
        const std::size_t run = 1 + rng.below(std::max<std::size_t>(quarter / 2, 1));
        const std::size_t start = static_cast<std::size_t>(b) * quarter + rng.below(quarter - run + 1);
        for (std::size_t k = start; k < start + run; ++k) slots[k] = tokenizer.id_of(static_cast<char>('0' + b));
        answer.push_back(static_cast<char>('0' + b));
      }
      const auto table = params.at("llm.embed").values();
      Tensor visual({visual_length, d});
      auto v = visual.mutable_values();
      for (std::size_t k = 0; k < visual_length; ++k)
        std::copy_n(&table[static_cast<std::size_t>(slots[k]) * d], d, &v[k * d]);
      const auto question = tokenizer.encode(question_templates()[rng.below(question_templates().size())]);
      const auto answer_ids = tokenizer.encode(answer);

      nn::Tape tape;
      nn::Tape::Scope scope(tape);
      const llm::LlmOutput out = llm::llm_forward(visual, question, answer_ids, params, config, config.tap);
      Tensor loss = llm::vqa_loss(out.logits, answer_ids);
      if (!std::isfinite(loss.item())) fail(ErrorCode::NaNLoss, "non-finite loss during language pretraining");
      tape.backward(loss);
      sum += loss.item();
    }
    optimizer.step(params, 1.0 / static_cast<double>(pc.batch));
    curve.push_back(sum / static_cast<double>(pc.batch));
  }

  for (const auto& name : params.names()) params.unfreeze(name);
  for (const auto& name : saved_frozen) params.freeze(name);
  params.sync_requires_grad();
  return curve;
}

StepLosses train_step(std::span<const model::PreparedSample* const> batch, nn::ParamSet& params,
                      const model::ModelConfig& model_config, const TrainConfig& config, Sgd& optimizer) {
  if (batch.empty()) fail(ErrorCode::InvalidArgument, "empty batch");
  params.zero_grad();
  StepLosses sum;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    nn::Tape tape;
    nn::Tape::Scope scope(tape);
    const model::ForwardResult r = model::forward(*batch[i], params, model_config, config.lambda, config.lambda != 0.0);
    Tensor total = r.total;
    if (!std::isfinite(total.item()))
      fail(ErrorCode::NaNLoss, "non-finite loss at batch sample " + std::to_string(i));
    tape.backward(total);
    sum.vqa += r.loss_vqa.item();
    sum.mask += r.loss_mask.defined() ? r.loss_mask.item() : 0.0;
    sum.total += total.item();
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  optimizer.step(params, inv);
  return {sum.vqa * inv, sum.mask * inv, sum.total * inv};
}

double mask_iou(const Tensor& probs, const BinaryMask& target, double threshold) {
  const auto p = probs.values();
  const auto g = target.values();
  if (p.size() != g.size()) fail(ErrorCode::ShapeMismatch, "mask_iou: size mismatch");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool a = p[i] > threshold;
    const bool b = g[i] != 0;
    inter += a && b;
    uni += a || b;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

EvalReport evaluate(std::span<const model::PreparedSample> corpus, const nn::ParamSet& params,
                    const model::ModelConfig& model_config, double threshold, int threads) {
  if (!(threshold > 0.0 && threshold < 1.0)) fail(ErrorCode::InvalidArgument, "threshold must be in (0, 1)");
  EvalReport report;
  report.rows.resize(corpus.size());
  auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < corpus.size(); i += stride) {
      const model::ForwardResult r = model::forward(corpus[i], params, model_config, 1.0, true);
      double iou = 0.0;
      for (std::size_t t = 0; t < r.masks.size(); ++t)
        iou += mask_iou(r.masks[t].mask.probs, corpus[i].tile_masks[t], threshold);
      report.rows[i] = {i, iou / static_cast<double>(r.masks.size()), r.loss_vqa.item()};
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), 1,
                                                      std::max<std::size_t>(corpus.size(), 1));
  if (workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w, workers);
    for (auto& t : pool) t.join();
  }
  for (const auto& row : report.rows) {
    report.mean_iou += row.iou;
    report.mean_vqa += row.loss_vqa;
  }
  if (!corpus.empty()) {
    report.mean_iou /= static_cast<double>(corpus.size());
    report.mean_vqa /= static_cast<double>(corpus.size());
  }
  return report;
}

TrainResult train(std::span<const model::PreparedSample> corpus, nn::ParamSet& params,
                  const model::ModelConfig& model_config, const TrainConfig& config, const StepCallback& on_step) {
  validate(config);
  if (corpus.empty()) fail(ErrorCode::InvalidArgument, "empty training corpus");
  for (const auto& name : params.names()) params.unfreeze(name);
  for (const auto& prefix : config.freeze) params.freeze_prefix(prefix);
  params.sync_requires_grad();

  Rng rng(config.seed);
  std::vector<std::size_t> order(corpus.size());
  std::size_t cursor = order.size();
  auto next_index = [&] {
    if (cursor == order.size()) {
      std::iota(order.begin(), order.end(), 0);
      for (std::size_t j = order.size() - 1; j > 0; --j) std::swap(order[j], order[rng.below(j + 1)]);
      cursor = 0;
    }
    return order[cursor++];
  };

  Sgd optimizer(config);
  TrainResult result;
  std::vector<const model::PreparedSample*> batch(static_cast<std::size_t>(config.batch));
  for (int step = 0; step < config.steps; ++step) {
    for (auto& slot : batch) slot = &corpus[next_index()];
    const StepLosses losses = train_step(batch, params, model_config, config, optimizer);
    result.curve.push_back(losses);
    if (on_step) on_step(step, losses);
  }
  return result;
}

EvalReport probe_mask_head(std::span<const model::PreparedSample> corpus, const nn::ParamSet& trained,
                           const model::ModelConfig& model_config, const TrainConfig& config, double threshold,
                           int threads) {
  nn::ParamSet probe = trained.clone();
  const nn::ParamSet fresh = model::init_model(model_config, config.init_seed);
  TrainConfig probe_config = config;
  probe_config.lambda = 1.0;
  probe_config.freeze.clear();
  for (const auto& [name, tensor] : fresh.entries()) {
    if (name.rfind("mgm.", 0) == 0) {
      auto dst = probe.at(name).mutable_values();
      const auto src = tensor.values();
      std::copy(src.begin(), src.end(), dst.begin());
    } else {
      probe_config.freeze.push_back(name);
    }
  }
  train(corpus, probe, model_config, probe_config);
  return evaluate(corpus, probe, model_config, threshold, threads);
}

std::string loss_table(const std::vector<StepLosses>& curve) {
  std::string out = "step,loss_vqa,loss_mask,loss_total\n";
  char line[128];
  for (std::size_t s = 0; s < curve.size(); ++s) {
    std::snprintf(line, sizeof line, "%zu,%.17g,%.17g,%.17g\n", s, curve[s].vqa, curve[s].mask, curve[s].total);
    out += line;
  }
  return out;
}

}  // namespace vqamask::trainer
