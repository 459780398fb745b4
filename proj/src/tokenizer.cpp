#include "vqamask/tokenizer.hpp"

#include "json.hpp"

#include "vqamask/error.hpp"

namespace vqamask::llm {

int CharTokenizer::id_of(char c) const {
  if (c < kLowest || c > kHighest)
    fail(ErrorCode::UnknownCharacter, "character code " + std::to_string(static_cast<int>(static_cast<unsigned char>(c))) +
                                          " is outside the toy alphabet");
  return kFirstChar + (c - kLowest);
}

std::vector<int> CharTokenizer::encode(std::string_view text) const {
  std::vector<int> ids;
  ids.reserve(text.size() + 2);
  ids.push_back(kBos);
  for (char c : text) ids.push_back(id_of(c));
  ids.push_back(kEos);
  return ids;
}

std::string CharTokenizer::decode(const std::vector<int>& ids) const {
  std::string text;
  for (int id : ids) {
    if (id < 0 || id >= vocab_size()) fail(ErrorCode::IndexOutOfVocab, "token id " + std::to_string(id));
    if (id < kFirstChar) continue;
    text.push_back(static_cast<char>(kLowest + (id - kFirstChar)));
  }
  return text;
}

std::string CharTokenizer::token_text(int id) const {
  switch (id) {
    case kPad: return "<pad>";
    case kBos: return "<bos>";
    case kEos: return "<eos>";
    default: break;
  }
  if (id < 0 || id >= vocab_size()) fail(ErrorCode::IndexOutOfVocab, "token id " + std::to_string(id));
  return std::string(1, static_cast<char>(kLowest + (id - kFirstChar)));
}

std::string CharTokenizer::to_json() const {
  nlohmann::json table;
  table["specials"] = {{"<pad>", kPad}, {"<bos>", kBos}, {"<eos>", kEos}};
  nlohmann::json tokens = nlohmann::json::array();
  for (int id = 0; id < vocab_size(); ++id) tokens.push_back(token_text(id));
  table["tokens"] = tokens;
  table["vocab_size"] = vocab_size();
  return table.dump(2);
}

}  // namespace vqamask::llm
