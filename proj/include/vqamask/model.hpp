#pragma once

// Joint stage-1 model: vision -> connector -> tiny LLM (loss on the answer
// span) with the mask generator reading the tapped layer, one mask per tile.

#include <string>
#include <vector>

#include "vqamask/image.hpp"
#include "vqamask/maskgen.hpp"
#include "vqamask/mgm.hpp"
#include "vqamask/tinyllm.hpp"
#include "vqamask/tokenizer.hpp"
#include "vqamask/vision.hpp"

namespace vqamask::model {

struct ModelConfig {
  vision::VisionConfig vision;
  llm::LlmConfig llm;
  mgm::MgmConfig mgm;
};

/// Cross-module consistency (shared d, tap range, decoder depth).
void validate(const ModelConfig& config);

/// vision.*, connector.*, llm.* and mgm.* parameters; llm.* frozen.
nn::ParamSet init_model(const ModelConfig& config, std::uint64_t seed);

/// In-memory training example.
struct Sample {
  Image image;
  std::vector<maskgen::TextBox> boxes;
  std::string question;
  std::string answer;
  BinaryMask mask;
};

/// A sample after slicing and tokenization; immutable across steps.
struct PreparedSample {
  vision::TileLayout layout;
  std::vector<Image> tiles;
  std::vector<BinaryMask> tile_masks;
  std::vector<int> question_ids;
  std::vector<int> answer_ids;
};

PreparedSample prepare(const Sample& sample, const ModelConfig& config);

struct ForwardResult {
  nn::Tensor loss_vqa;
  nn::Tensor loss_mask;  // mean over tiles; undefined without the mask generator
  nn::Tensor total;
  llm::LlmOutput llm;
  std::vector<mgm::MgmOutput> masks;  // one per tile
};

/// total = L_vqa + λ·L_mask. With with_mgm false (or λ = 0) the mask generator
/// is not run at all and total = L_vqa.
ForwardResult forward(const PreparedSample& sample, const nn::ParamSet& params, const ModelConfig& config,
                      double lambda, bool with_mgm = true, nn::StageCache* cache = nullptr);

/// All tiles' connector outputs stacked in tile order: [tiles·n × d].
nn::Tensor visual_tokens(const PreparedSample& sample, const nn::ParamSet& params, const ModelConfig& config,
                         nn::StageCache* cache = nullptr);

}  // namespace vqamask::model
