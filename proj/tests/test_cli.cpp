#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"

namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "vqamask_cli";

int run(const std::string& args) {
  const std::string command = std::string(VQAMASK_CLI) + " " + args + " >>" + (kWork / "log.txt").string() + " 2>&1";
  const int status = std::system(command.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

// A model small enough for a central-difference check in well under a second.
const char* kTinyModel =
    R"({"tile_side": 32, "patch": 8, "window": 2, "ratio": 2, "d": 8, "llm_layers": 2, "llm_ffn": 16,
        "mgm_layers": 1, "mgm_ffn": 16, "tap": 1})";

}  // namespace

TEST_CASE("command-line tool end to end") {
  fs::remove_all(kWork);
  fs::create_directories(kWork);
  const std::string w = kWork.string();

  SUBCASE("argument errors are validation failures") {
    CHECK(run("--help") == 0);
    CHECK(run("") == 1);
    CHECK(run("genmask") == 1);
    CHECK(run("synth --out " + w + "/s --count 0") == 1);
    CHECK(run("render --ckpt x --image y --out z --mode heat") == 1);
  }

  SUBCASE("synth and genmask: thread-independent bytes and exit codes") {
    REQUIRE(run("synth --out " + w + "/c --count 6 --seed 3") == 0);
    REQUIRE(fs::exists(kWork / "c/manifest.jsonl"));
    REQUIRE(run("genmask --manifest " + w + "/c/manifest.jsonl --threads 1") == 0);
    std::vector<std::string> first;
    for (int i = 0; i < 6; ++i) first.push_back(slurp(kWork / "c" / ("mask_0000" + std::to_string(i) + ".pgm")));
    REQUIRE(run("genmask --manifest " + w + "/c/manifest.jsonl --threads 8") == 0);
    for (int i = 0; i < 6; ++i) {
      CHECK(!first[static_cast<std::size_t>(i)].empty());
      CHECK(first[static_cast<std::size_t>(i)] == slurp(kWork / "c" / ("mask_0000" + std::to_string(i) + ".pgm")));
    }

    CHECK(run("genmask --manifest " + w + "/missing.jsonl") == 2);
    write(kWork / "bad.jsonl", "{\"image\": \"nope.pgm\", \"boxes\": [[0,0,2,2]], \"mask\": \"m.pgm\"}\n");
    CHECK(run("genmask --manifest " + w + "/bad.jsonl") == 2);
    write(kWork / "malformed.jsonl", "{\"image\": 3}\n");
    CHECK(run("genmask --manifest " + w + "/malformed.jsonl") == 1);
    CHECK(run("genmask --strict --manifest " + w + "/malformed.jsonl") == 1);
  }

  SUBCASE("train, eval and render on a tiny run") {
    write(kWork / "run.json", R"({"corpus_count": 4, "steps": 3, "batch": 2, "lm_pretrain_steps": 3})");
    write(kWork / "typo.json", R"({"stepss": 3})");
    CHECK(run("train --config " + w + "/typo.json --out " + w + "/r") == 1);
    REQUIRE(run("train --quiet --config " + w + "/run.json --out " + w + "/r") == 0);
    for (const char* f : {"model.ckpt", "config.json", "alphabet.json", "loss.csv", "pretrain_loss.csv", "eval.json"})
      CHECK(fs::exists(kWork / "r" / f));

    REQUIRE(run("synth --out " + w + "/e --count 2 --seed 9") == 0);
    REQUIRE(run("genmask --manifest " + w + "/e/manifest.jsonl") == 0);
    CHECK(run("eval --ckpt " + w + "/r/model.ckpt --manifest " + w + "/e/manifest.jsonl --out " + w + "/e.json") == 0);
    CHECK(slurp(kWork / "e.json").find("mean_iou") != std::string::npos);
    CHECK(run("eval --ckpt " + w + "/missing.ckpt --manifest " + w + "/e/manifest.jsonl") == 2);

    CHECK(run("render --ckpt " + w + "/r/model.ckpt --image " + w + "/e/image_00000.pgm --out " + w + "/m.ppm") == 0);
    CHECK(run("render --mode attention --ckpt " + w + "/r/model.ckpt --image " + w + "/e/image_00000.pgm --out " + w +
              "/a.ppm --question \"Read all.\" --answer 12") == 0);
    CHECK(slurp(kWork / "m.ppm").rfind("P6", 0) == 0);
    CHECK(fs::file_size(kWork / "a.ppm") > 64 * 64 * 3);
  }

  SUBCASE("gradcheck on a tiny configuration") {
    write(kWork / "tiny.json", kTinyModel);
    CHECK(run("gradcheck --config " + w + "/tiny.json") == 0);
  }
}
