#include "vqamask/io/manifest.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "vqamask/error.hpp"

namespace vqamask::io {

using nlohmann::json;

namespace {

ManifestRecord parse_record(const std::string& line) {
  const json j = json::parse(line);  // throws json::exception
  if (!j.is_object()) throw std::invalid_argument("record is not an object");
  ManifestRecord r;
  if (!j.contains("image") || !j["image"].is_string()) throw std::invalid_argument("missing string field 'image'");
  r.image = j["image"].get<std::string>();
  if (j.contains("mask")) {
    if (!j["mask"].is_string()) throw std::invalid_argument("field 'mask' must be a string");
    r.mask = j["mask"].get<std::string>();
  }
  if (j.contains("question")) r.question = j.at("question").get<std::string>();
  if (j.contains("answer")) r.answer = j.at("answer").get<std::string>();
  if (j.contains("boxes")) {
    if (!j["boxes"].is_array()) throw std::invalid_argument("field 'boxes' must be an array");
    for (const auto& b : j["boxes"]) {
      if (!b.is_array() || b.size() != 4) throw std::invalid_argument("each box must be [x0, y0, x1, y1]");
      for (const auto& v : b)
        if (!v.is_number_integer()) throw std::invalid_argument("box coordinates must be integers");
      r.boxes.push_back({b[0].get<int>(), b[1].get<int>(), b[2].get<int>(), b[3].get<int>()});
    }
  }
  return r;
}

bool blank(const std::string& line) { return line.find_first_not_of(" \t\r") == std::string::npos; }

}  // namespace

std::filesystem::path Manifest::resolve(const std::string& relative) const {
  const std::filesystem::path p(relative);
  if (p.is_absolute()) return p;
  return source.parent_path() / p;
}

Manifest parse_manifest(const std::string& text, const std::filesystem::path& source, bool strict) {
  Manifest m;
  m.source = source;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (blank(line)) continue;
    try {
      ManifestRecord r = parse_record(line);
      r.line = number;
      m.records.push_back(std::move(r));
    } catch (const std::exception& e) {
      const std::string message = std::string(e.what());
      if (strict)
        fail(ErrorCode::MalformedRecord, source.string() + ":" + std::to_string(number) + ": " + message);
      m.diagnostics.push_back({number, message});
    }
  }
  return m;
}

Manifest load_manifest(const std::filesystem::path& path, bool strict) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Unreadable, path.string() + ": cannot open manifest");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_manifest(text.str(), path, strict);
}

std::string format_record(const ManifestRecord& r) {
  json j;
  j["image"] = r.image;
  json boxes = json::array();
  for (const auto& b : r.boxes) boxes.push_back({b.x0, b.y0, b.x1, b.y1});
  j["boxes"] = boxes;
  if (!r.mask.empty()) j["mask"] = r.mask;
  if (!r.question.empty()) j["question"] = r.question;
  if (!r.answer.empty()) j["answer"] = r.answer;
  return j.dump();
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::WriteFailure, path.string() + ": cannot open for writing");
  for (const auto& r : records) out << format_record(r) << '\n';
  out.flush();
  if (!out) fail(ErrorCode::WriteFailure, path.string() + ": write failed");
}

}  // namespace vqamask::io
