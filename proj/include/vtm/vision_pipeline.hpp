#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vtm/autodiff.hpp"
#include "vtm/datamodel.hpp"
#include "vtm/params.hpp"
#include "vtm/transformer.hpp"

namespace vtm {

struct SamplerConfig {
    int64_t num_frames = 8;
    bool train_mode = false;
};

// F indices into [0, total_frames), nondecreasing: one per equal segment,
// centered in eval mode, uniform within the segment in train mode.
std::vector<int64_t> sample_segments(int64_t total_frames, const SamplerConfig& cfg, uint64_t seed);

enum class VisualPromptKind { Joint, Shift, MeanP, Conv1D, LSTM, Transf, Transf_cls };

const char* visual_prompt_name(VisualPromptKind kind);
VisualPromptKind visual_prompt_from_name(const std::string& name);
std::vector<VisualPromptKind> all_visual_prompts();
// post-network kinds carry a temporal head over per-frame features
bool is_post_network(VisualPromptKind kind);

struct VisionEncoderParams {
    int64_t image_size = 0, patch = 0, width = 0, heads = 0, embed_dim = 0, frames = 0;
    Var patch_proj, class_token, pos_emb;
    std::vector<BlockParams> blocks;
    Var ln_f_g, ln_f_b, proj;
    Var temporal_pos;  // Joint only

    int64_t patches_per_frame() const {
        return (image_size / patch) * (image_size / patch);
    }
};

struct TemporalHeadParams {
    VisualPromptKind kind = VisualPromptKind::MeanP;
    int64_t frames = 0, dim = 0, heads = 0;
    Var conv_kernel, conv_bias;      // Conv1D
    Var lstm_wx, lstm_wh, lstm_b;    // LSTM
    Var pos_emb, cls_token;          // Transf / Transf_cls
    std::vector<BlockParams> blocks;
};

VisionEncoderParams make_vision_encoder(ParamStore& store, int64_t image_size, int64_t patch,
                                        int64_t width, int64_t layers, int64_t heads,
                                        int64_t embed_dim, int64_t frames,
                                        VisualPromptKind kind, Rng& rng);

TemporalHeadParams make_temporal_head(ParamStore& store, VisualPromptKind kind, int64_t frames,
                                      int64_t dim, int64_t heads, int64_t layers, Rng& rng);

// clip preprocessing
VideoClip resize_clip_bilinear(const VideoClip& clip, int64_t out_h, int64_t out_w);
VideoClip crop_clip(const VideoClip& clip, int64_t top, int64_t left, int64_t size);
// shorter-side resize then crop: random position in train mode, centered otherwise
VideoClip preprocess_clip(const VideoClip& clip, int64_t image_size, bool train_mode, uint64_t seed);
// (top, left) for the three crops along the longer side
std::vector<std::pair<int64_t, int64_t>> three_crop_offsets(int64_t h, int64_t w, int64_t size);

// stacks the sampled frames of preprocessed clips into [B*F, H, W, C]
Tensor gather_frames(const std::vector<const VideoClip*>& clips,
                     const std::vector<std::vector<int64_t>>& frame_indices);

// [B*F, H, W, C] -> [B*F, P+1, width]: projected patches, class token
// prepended, spatial positional embedding added
Var patchify(const Tensor& frames, const VisionEncoderParams& params);

// Joint -> [B, embed_dim]; Shift and post-network kinds -> [B, F, embed_dim]
Var encode_spatial(const Tensor& frames, const VisionEncoderParams& params, VisualPromptKind kind,
                   int64_t batch, int64_t num_frames);

// u: [B, F, dim] -> [B, dim]
Var temporal_head(Var u, const TemporalHeadParams& params);

// spatial encoder output -> per-clip embedding [B, dim] for any prompt kind
Var aggregate_clip_features(Var spatial, const TemporalHeadParams* head, VisualPromptKind kind);

// full path: segment sampling, patchify, spatial encoder, temporal
// aggregation. `head` may be null for Joint/Shift/MeanP.
Var encode_video(const std::vector<const VideoClip*>& clips, const SamplerConfig& sampler,
                 const VisionEncoderParams& params, const TemporalHeadParams* head,
                 VisualPromptKind kind, uint64_t seed);

}  // namespace vtm
