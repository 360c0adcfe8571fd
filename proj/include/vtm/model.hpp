#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vtm/datamodel.hpp"
#include "vtm/objective.hpp"
#include "vtm/params.hpp"
#include "vtm/text_pipeline.hpp"
#include "vtm/vision_pipeline.hpp"

namespace vtm {

struct ModelConfig {
    int64_t embed_dim = 32;
    int64_t text_width = 64, text_layers = 2, text_heads = 4, context_len = 16;
    int64_t image_size = 64, patch = 8;
    int64_t vision_width = 64, vision_layers = 2, vision_heads = 4, frames = 8;
    int64_t head_layers = 2, head_heads = 4;
    VisualPromptKind prompt = VisualPromptKind::Transf;
    bool text_prompt = true;  // false = bare-label templates
    bool unimodal = false;    // linear classifier over the vocabulary, no text tower
    uint64_t init_seed = 42;
};

struct Model {
    ModelConfig cfg;
    LabelVocabulary vocab;
    std::vector<PromptTemplate> templates;
    Tokenizer tokenizer;
    ParamStore store;
    TextEncoderParams text;
    VisionEncoderParams vision;
    TemporalHeadParams head;
    bool has_head = false;
    Temperature temp;
    Var unimodal_w, unimodal_b;
};

// registration order fixes the checkpoint payload order:
// text.* then vision.* then head.* then temp.log_scale (unimodal.* replaces
// the text tower and temperature when cfg.unimodal is set)
Model build_model(const ModelConfig& cfg, const LabelVocabulary& vocab,
                  std::vector<PromptTemplate> templates = {});

// stable across runs; stamped into checkpoints to catch config drift
uint64_t config_hash(const ModelConfig& cfg);
uint64_t fnv1a64(const std::string& text);

// preprocesses clips to the model's input size and encodes them, [B, embed_dim]
Var model_video_batch(Model& model, const std::vector<const VideoClip*>& clips, bool train_mode,
                      uint64_t seed);

// vocabulary label rows [V, embed_dim] through the text tower, unnormalized
Var model_label_embeddings(Model& model, LabelEmbedMode mode, uint64_t seed);

// training loss for one labeled batch: multi-positive contrastive, or
// softmax cross-entropy over the vocabulary when unimodal
Var model_loss(Model& model, const std::vector<const VideoClip*>& clips,
               const std::vector<int64_t>& labels, uint64_t step_seed);

}  // namespace vtm
