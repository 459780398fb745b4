#include "vqamask/io/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "json.hpp"
#include "vqamask/error.hpp"

namespace vqamask::io {

using nlohmann::json;

namespace {

template <class T>
std::function<void(RunConfig&, const json&)> field(T RunConfig::*member) {
  return [member](RunConfig& c, const json& v) { c.*member = v.get<T>(); };
}

template <class F>
std::function<void(RunConfig&, const json&)> with(F&& setter) {
  return std::function<void(RunConfig&, const json&)>(std::forward<F>(setter));
}

const std::map<std::string, std::function<void(RunConfig&, const json&)>>& setters() {
  static const std::map<std::string, std::function<void(RunConfig&, const json&)>> table{
      {"tile_side", with([](RunConfig& c, const json& v) { c.model.vision.tile_side = v.get<int>(); })},
      {"max_tiles", with([](RunConfig& c, const json& v) { c.model.vision.max_tiles = v.get<int>(); })},
      {"patch", with([](RunConfig& c, const json& v) { c.model.vision.patch = v.get<int>(); })},
      {"window", with([](RunConfig& c, const json& v) { c.model.vision.window = v.get<int>(); })},
      {"ratio", with([](RunConfig& c, const json& v) { c.model.vision.ratio = v.get<int>(); })},
      {"d", with([](RunConfig& c, const json& v) {
         const int d = v.get<int>();
         c.model.vision.d = c.model.llm.d = c.model.mgm.d = d;
       })},
      {"llm_layers", with([](RunConfig& c, const json& v) { c.model.llm.layers = v.get<int>(); })},
      {"llm_heads", with([](RunConfig& c, const json& v) { c.model.llm.heads = v.get<int>(); })},
      {"llm_ffn", with([](RunConfig& c, const json& v) { c.model.llm.ffn = v.get<int>(); })},
      {"tap", with([](RunConfig& c, const json& v) { c.model.llm.tap = v.get<int>(); })},
      {"mgm_layers", with([](RunConfig& c, const json& v) { c.model.mgm.layers = v.get<int>(); })},
      {"mgm_heads", with([](RunConfig& c, const json& v) { c.model.mgm.heads = v.get<int>(); })},
      {"mgm_ffn", with([](RunConfig& c, const json& v) { c.model.mgm.ffn = v.get<int>(); })},
      {"steps", with([](RunConfig& c, const json& v) { c.train.steps = v.get<int>(); })},
      {"batch", with([](RunConfig& c, const json& v) { c.train.batch = v.get<int>(); })},
      {"lr_mgm", with([](RunConfig& c, const json& v) { c.train.lr_mgm = v.get<double>(); })},
      {"lr_rest", with([](RunConfig& c, const json& v) { c.train.lr_rest = v.get<double>(); })},
      {"lr_scale", with([](RunConfig& c, const json& v) { c.train.lr_scale = v.get<double>(); })},
      {"momentum", with([](RunConfig& c, const json& v) { c.train.momentum = v.get<double>(); })},
      {"lambda", with([](RunConfig& c, const json& v) { c.train.lambda = v.get<double>(); })},
      {"seed", with([](RunConfig& c, const json& v) { c.train.seed = v.get<std::uint64_t>(); })},
      {"init_seed", with([](RunConfig& c, const json& v) { c.train.init_seed = v.get<std::uint64_t>(); })},
      {"freeze", with([](RunConfig& c, const json& v) { c.train.freeze = v.get<std::vector<std::string>>(); })},
      {"lm_pretrain_steps", with([](RunConfig& c, const json& v) { c.pretrain.steps = v.get<int>(); })},
      {"lm_pretrain_batch", with([](RunConfig& c, const json& v) { c.pretrain.batch = v.get<int>(); })},
      {"lm_pretrain_lr", with([](RunConfig& c, const json& v) { c.pretrain.lr = v.get<double>(); })},
      {"lm_pretrain_momentum", with([](RunConfig& c, const json& v) { c.pretrain.momentum = v.get<double>(); })},
      {"lm_pretrain_seed", with([](RunConfig& c, const json& v) { c.pretrain.seed = v.get<std::uint64_t>(); })},
      {"corpus_count", field(&RunConfig::corpus_count)},
      {"corpus_canvas", field(&RunConfig::corpus_canvas)},
      {"corpus_seed", field(&RunConfig::corpus_seed)},
      {"threshold", field(&RunConfig::threshold)},
      {"manifest", field(&RunConfig::manifest)},
  };
  return table;
}

}  // namespace

void apply_json(RunConfig& config, const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidArgument, std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) fail(ErrorCode::InvalidArgument, "config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    const auto it = setters().find(key);
    if (it == setters().end()) fail(ErrorCode::InvalidArgument, "unknown config key '" + key + "'");
    try {
      it->second(config, value);
    } catch (const json::exception& e) {
      fail(ErrorCode::InvalidArgument, "config key '" + key + "': " + e.what());
    }
  }
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Unreadable, path.string() + ": cannot open config");
  std::ostringstream text;
  text << in.rdbuf();
  RunConfig config;
  apply_json(config, text.str());
  return config;
}

std::string to_json(const RunConfig& c) {
  json j;
  j["tile_side"] = c.model.vision.tile_side;
  j["max_tiles"] = c.model.vision.max_tiles;
  j["patch"] = c.model.vision.patch;
  j["window"] = c.model.vision.window;
  j["ratio"] = c.model.vision.ratio;
  j["d"] = c.model.llm.d;
  j["llm_layers"] = c.model.llm.layers;
  j["llm_heads"] = c.model.llm.heads;
  j["llm_ffn"] = c.model.llm.ffn;
  j["tap"] = c.model.llm.tap;
  j["mgm_layers"] = c.model.mgm.layers;
  j["mgm_heads"] = c.model.mgm.heads;
  j["mgm_ffn"] = c.model.mgm.ffn;
  j["steps"] = c.train.steps;
  j["batch"] = c.train.batch;
  j["lr_mgm"] = c.train.lr_mgm;
  j["lr_rest"] = c.train.lr_rest;
  j["lr_scale"] = c.train.lr_scale;
  j["momentum"] = c.train.momentum;
  j["lambda"] = c.train.lambda;
  j["seed"] = c.train.seed;
  j["init_seed"] = c.train.init_seed;
  j["freeze"] = c.train.freeze;
  j["lm_pretrain_steps"] = c.pretrain.steps;
  j["lm_pretrain_batch"] = c.pretrain.batch;
  j["lm_pretrain_lr"] = c.pretrain.lr;
  j["lm_pretrain_momentum"] = c.pretrain.momentum;
  j["lm_pretrain_seed"] = c.pretrain.seed;
  j["corpus_count"] = c.corpus_count;
  j["corpus_canvas"] = c.corpus_canvas;
  j["corpus_seed"] = c.corpus_seed;
  j["threshold"] = c.threshold;
  j["manifest"] = c.manifest;
  return j.dump(2);
}

}  // namespace vqamask::io
