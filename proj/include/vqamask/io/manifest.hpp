#pragma once

// Line-delimited JSON manifests, one record per non-empty line:
//   {"image": "a.pgm", "boxes": [[x0,y0,x1,y1], ...], "mask": "a_mask.pgm",
//    "question": "Read all.", "answer": "02"}
// Relative paths resolve against the manifest's directory. "question" and
// "answer" are optional (genmask ignores them).

#include <filesystem>
#include <string>
#include <vector>

#include "vqamask/maskgen.hpp"

namespace vqamask::io {

struct ManifestRecord {
  std::size_t line = 0;  // 1-based source line; 0 for records built in memory
  std::string image;
  std::vector<maskgen::TextBox> boxes;
  std::string mask;
  std::string question;
  std::string answer;

  friend bool operator==(const ManifestRecord& a, const ManifestRecord& b) {
    return a.image == b.image && a.boxes == b.boxes && a.mask == b.mask && a.question == b.question &&
           a.answer == b.answer;
  }
};

struct Diagnostic {
  std::size_t line = 0;
  std::string message;
};

struct Manifest {
  std::filesystem::path source;
  std::vector<ManifestRecord> records;
  std::vector<Diagnostic> diagnostics;  // malformed lines skipped in lenient mode

  /// `relative` resolved against the manifest directory.
  std::filesystem::path resolve(const std::string& relative) const;
};

/// Throws Unreadable if the file cannot be opened; in strict mode the first
/// malformed line throws MalformedRecord.
Manifest load_manifest(const std::filesystem::path& path, bool strict = false);
/// Parses manifest text; `source` only anchors relative paths.
Manifest parse_manifest(const std::string& text, const std::filesystem::path& source, bool strict = false);

std::string format_record(const ManifestRecord& record);
/// Throws WriteFailure.
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records);

}  // namespace vqamask::io
