#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace vqamask::llm {

/// Character-level vocabulary: three special tokens followed by printable
/// ASCII 0x20..0x7E in code-point order.
///
///   id 0 PAD, id 1 BOS, id 2 EOS, id 3 + (c - 0x20) for character c.
class CharTokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kFirstChar = 3;
  static constexpr char kLowest = ' ';
  static constexpr char kHighest = '~';

  int vocab_size() const { return kFirstChar + (kHighest - kLowest + 1); }

  /// BOS, one id per character, EOS. Throws UnknownCharacter.
  std::vector<int> encode(std::string_view text) const;
  /// Inverse of encode; BOS/EOS/PAD are dropped. Throws IndexOutOfVocab.
  std::string decode(const std::vector<int>& ids) const;

  int id_of(char c) const;
  /// Printable spelling: "<pad>", "<bos>", "<eos>" or the character itself.
  std::string token_text(int id) const;

  /// {"specials": {...}, "tokens": [...]} table, written next to checkpoints.
  std::string to_json() const;
};

}  // namespace vqamask::llm
