#include "vtm/vision_pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "vtm/errors.hpp"
#include "vtm/rng.hpp"

namespace vtm {

std::vector<int64_t> sample_segments(int64_t total_frames, const SamplerConfig& cfg, uint64_t seed) {
    if (total_frames < 1) throw ConfigError("sample_segments: total_frames must be >= 1");
    if (cfg.num_frames < 1) throw ConfigError("sample_segments: num_frames must be >= 1");
    const int64_t f = cfg.num_frames;
    Rng rng(seed);
    std::vector<int64_t> out(static_cast<size_t>(f));
    for (int64_t i = 0; i < f; ++i) {
        const int64_t start = (i * total_frames) / f;
        const int64_t end = ((i + 1) * total_frames) / f;
        int64_t idx = start;
        if (end > start) {
            idx = cfg.train_mode ? rng.uniform_int(start, end - 1) : start + (end - start) / 2;
        }
        out[static_cast<size_t>(i)] = idx;
    }
    return out;
}

const char* visual_prompt_name(VisualPromptKind kind) {
    switch (kind) {
        case VisualPromptKind::Joint: return "joint";
        case VisualPromptKind::Shift: return "shift";
        case VisualPromptKind::MeanP: return "meanp";
        case VisualPromptKind::Conv1D: return "conv1d";
        case VisualPromptKind::LSTM: return "lstm";
        case VisualPromptKind::Transf: return "transf";
        case VisualPromptKind::Transf_cls: return "transf_cls";
    }
    throw ConfigError("visual_prompt_name: unknown kind");
}

VisualPromptKind visual_prompt_from_name(const std::string& name) {
    std::string low;
    low.reserve(name.size());
    for (char ch : name) low.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    for (VisualPromptKind kind : all_visual_prompts()) {
        if (low == visual_prompt_name(kind)) return kind;
    }
    throw ConfigError("unknown visual prompt '" + name +
                      "' (expected joint, shift, meanp, conv1d, lstm, transf, or transf_cls)");
}

std::vector<VisualPromptKind> all_visual_prompts() {
    return {VisualPromptKind::Joint,  VisualPromptKind::Shift, VisualPromptKind::MeanP,
            VisualPromptKind::Conv1D, VisualPromptKind::LSTM,  VisualPromptKind::Transf,
            VisualPromptKind::Transf_cls};
}

bool is_post_network(VisualPromptKind kind) {
    switch (kind) {
        case VisualPromptKind::Joint:
        case VisualPromptKind::Shift: return false;
        default: return true;
    }
}

VisionEncoderParams make_vision_encoder(ParamStore& store, int64_t image_size, int64_t patch,
                                        int64_t width, int64_t layers, int64_t heads,
                                        int64_t embed_dim, int64_t frames,
                                        VisualPromptKind kind, Rng& rng) {
    if (image_size < 1 || patch < 1 || image_size % patch != 0)
        throw ConfigError("vision encoder: image size must be a positive multiple of the patch size");
    if (width < 1 || heads < 1 || width % heads != 0)
        throw ConfigError("vision encoder: width must be a positive multiple of heads");
    if (embed_dim < 1 || frames < 1 || layers < 0)
        throw ConfigError("vision encoder: bad embed_dim, frames, or layer count");
    VisionEncoderParams p;
    p.image_size = image_size;
    p.patch = patch;
    p.width = width;
    p.heads = heads;
    p.embed_dim = embed_dim;
    p.frames = frames;
    const int64_t patches = p.patches_per_frame();
    const int64_t patch_dim = patch * patch * 3;
    p.patch_proj = store.add(
        "vision.patch_proj",
        normal_init({patch_dim, width}, 1.0 / std::sqrt(static_cast<double>(patch_dim)), rng));
    // zero class token: the readout stream then starts as pure attention-pooled
    // patch content, which keeps clip embeddings input-dependent at init
    p.class_token = store.add("vision.class_token", Tensor({1, width}));
    p.pos_emb = store.add("vision.pos_emb", normal_init({patches + 1, width}, 0.01, rng));
    p.blocks = make_blocks(store, "vision", layers, width, false, rng);
    p.ln_f_g = store.add("vision.ln_f.g", Tensor::full({width}, 1.0));
    p.ln_f_b = store.add("vision.ln_f.b", Tensor({width}));
    p.proj = store.add("vision.proj",
                       normal_init({width, embed_dim}, 1.0 / std::sqrt(static_cast<double>(width)), rng));
    if (kind == VisualPromptKind::Joint) {
        // zero so the temporal signal fades in during fine-tuning
        p.temporal_pos = store.add("vision.temporal_pos", Tensor({frames, width}));
    }
    return p;
}

TemporalHeadParams make_temporal_head(ParamStore& store, VisualPromptKind kind, int64_t frames,
                                      int64_t dim, int64_t heads, int64_t layers, Rng& rng) {
    if (!is_post_network(kind))
        throw ConfigError("temporal head: only post-network prompt kinds carry head parameters");
    if (frames < 1 || dim < 1) throw ConfigError("temporal head: frames and dim must be >= 1");
    TemporalHeadParams h;
    h.kind = kind;
    h.frames = frames;
    h.dim = dim;
    h.heads = heads;
    switch (kind) {
        case VisualPromptKind::MeanP: break;
        case VisualPromptKind::Conv1D: {
            // identity kernel: the head starts out exactly as mean pooling
            Tensor k({3, dim, dim});
            for (int64_t i = 0; i < dim; ++i) k.data()[(dim + i) * dim + i] = 1.0;
            h.conv_kernel = store.add("head.conv.kernel", std::move(k));
            h.conv_bias = store.add("head.conv.bias", Tensor({dim}));
            break;
        }
        case VisualPromptKind::LSTM: {
            const double s = 1.0 / std::sqrt(static_cast<double>(dim));
            h.lstm_wx = store.add("head.lstm.wx", normal_init({dim, 4 * dim}, s, rng));
            h.lstm_wh = store.add("head.lstm.wh", normal_init({dim, 4 * dim}, s, rng));
            h.lstm_b = store.add("head.lstm.b", Tensor({4 * dim}));
            break;
        }
        case VisualPromptKind::Transf: {
            if (heads < 1 || dim % heads != 0)
                throw ConfigError("temporal head: dim must be a positive multiple of heads");
            h.pos_emb = store.add("head.pos_emb", Tensor({frames, dim}));
            h.blocks = make_blocks(store, "head", layers, dim, true, rng);
            break;
        }
        case VisualPromptKind::Transf_cls: {
            if (heads < 1 || dim % heads != 0)
                throw ConfigError("temporal head: dim must be a positive multiple of heads");
            h.pos_emb = store.add("head.pos_emb", Tensor({frames + 1, dim}));
            h.cls_token = store.add("head.cls", normal_init({1, dim}, 0.02, rng));
            h.blocks = make_blocks(store, "head", layers, dim, true, rng);
            break;
        }
        default: break;
    }
    return h;
}

VideoClip resize_clip_bilinear(const VideoClip& clip, int64_t out_h, int64_t out_w) {
    if (out_h < 1 || out_w < 1) throw ConfigError("resize: output dims must be >= 1");
    if (clip.height == out_h && clip.width == out_w) return clip;
    VideoClip out;
    out.id = clip.id;
    out.frames = clip.frames;
    out.height = out_h;
    out.width = out_w;
    out.channels = clip.channels;
    out.label_indices = clip.label_indices;
    out.data.resize(static_cast<size_t>(out.numel()));
    const double sy = static_cast<double>(clip.height) / static_cast<double>(out_h);
    const double sx = static_cast<double>(clip.width) / static_cast<double>(out_w);
    for (int64_t f = 0; f < clip.frames; ++f) {
        for (int64_t y = 0; y < out_h; ++y) {
            double src_y = (static_cast<double>(y) + 0.5) * sy - 0.5;
            src_y = std::clamp(src_y, 0.0, static_cast<double>(clip.height - 1));
            const int64_t y0 = static_cast<int64_t>(std::floor(src_y));
            const int64_t y1 = std::min(y0 + 1, clip.height - 1);
            const double wy = src_y - static_cast<double>(y0);
            for (int64_t x = 0; x < out_w; ++x) {
                double src_x = (static_cast<double>(x) + 0.5) * sx - 0.5;
                src_x = std::clamp(src_x, 0.0, static_cast<double>(clip.width - 1));
                const int64_t x0 = static_cast<int64_t>(std::floor(src_x));
                const int64_t x1 = std::min(x0 + 1, clip.width - 1);
                const double wx = src_x - static_cast<double>(x0);
                for (int64_t c = 0; c < clip.channels; ++c) {
                    const double top = (1.0 - wx) * clip.at(f, y0, x0, c) + wx * clip.at(f, y0, x1, c);
                    const double bot = (1.0 - wx) * clip.at(f, y1, x0, c) + wx * clip.at(f, y1, x1, c);
                    out.at(f, y, x, c) = static_cast<float>((1.0 - wy) * top + wy * bot);
                }
            }
        }
    }
    return out;
}

VideoClip crop_clip(const VideoClip& clip, int64_t top, int64_t left, int64_t size) {
    if (size < 1 || top < 0 || left < 0 || top + size > clip.height || left + size > clip.width)
        throw ConfigError("crop: window out of bounds");
    if (size == clip.height && size == clip.width) return clip;
    VideoClip out;
    out.id = clip.id;
    out.frames = clip.frames;
    out.height = size;
    out.width = size;
    out.channels = clip.channels;
    out.label_indices = clip.label_indices;
    out.data.resize(static_cast<size_t>(out.numel()));
    for (int64_t f = 0; f < clip.frames; ++f)
        for (int64_t y = 0; y < size; ++y)
            for (int64_t x = 0; x < size; ++x)
                for (int64_t c = 0; c < clip.channels; ++c)
                    out.at(f, y, x, c) = clip.at(f, top + y, left + x, c);
    return out;
}

VideoClip preprocess_clip(const VideoClip& clip, int64_t image_size, bool train_mode, uint64_t seed) {
    if (image_size < 1) throw ConfigError("preprocess: image size must be >= 1");
    if (clip.height == image_size && clip.width == image_size) return clip;
    int64_t nh = image_size, nw = image_size;
    if (clip.height <= clip.width) {
        nw = std::max<int64_t>(
            image_size, std::llround(static_cast<double>(clip.width) * image_size / static_cast<double>(clip.height)));
    } else {
        nh = std::max<int64_t>(
            image_size, std::llround(static_cast<double>(clip.height) * image_size / static_cast<double>(clip.width)));
    }
    VideoClip resized = resize_clip_bilinear(clip, nh, nw);
    const int64_t max_top = nh - image_size;
    const int64_t max_left = nw - image_size;
    int64_t top = max_top / 2, left = max_left / 2;
    if (train_mode) {
        Rng rng(seed);
        top = max_top > 0 ? rng.uniform_int(0, max_top) : 0;
        left = max_left > 0 ? rng.uniform_int(0, max_left) : 0;
    }
    return crop_clip(resized, top, left, image_size);
}

std::vector<std::pair<int64_t, int64_t>> three_crop_offsets(int64_t h, int64_t w, int64_t size) {
    if (size < 1 || size > h || size > w) throw ConfigError("three_crop_offsets: size exceeds frame");
    if (w >= h) {
        const int64_t top = (h - size) / 2;
        return {{top, 0}, {top, (w - size) / 2}, {top, w - size}};
    }
    const int64_t left = (w - size) / 2;
    return {{0, left}, {(h - size) / 2, left}, {h - size, left}};
}

Tensor gather_frames(const std::vector<const VideoClip*>& clips,
                     const std::vector<std::vector<int64_t>>& frame_indices) {
    if (clips.empty()) throw ConfigError("gather_frames: empty batch");
    if (frame_indices.size() != clips.size())
        throw ConfigError("gather_frames: one index list per clip required");
    const VideoClip* first = clips[0];
    if (!first) throw ConfigError("gather_frames: null clip");
    const int64_t f = static_cast<int64_t>(frame_indices[0].size());
    if (f < 1) throw ConfigError("gather_frames: empty index list");
    const int64_t h = first->height, w = first->width, c = first->channels;
    const int64_t b = static_cast<int64_t>(clips.size());
    Tensor out({b * f, h, w, c});
    double* dst = out.data();
    const int64_t frame_elems = h * w * c;
    for (int64_t bi = 0; bi < b; ++bi) {
        const VideoClip* clip = clips[static_cast<size_t>(bi)];
        if (!clip) throw ConfigError("gather_frames: null clip");
        if (clip->height != h || clip->width != w || clip->channels != c)
            throw ConfigError("gather_frames: clip dims differ within batch");
        const auto& idx = frame_indices[static_cast<size_t>(bi)];
        if (static_cast<int64_t>(idx.size()) != f)
            throw ConfigError("gather_frames: ragged index lists");
        for (int64_t fi = 0; fi < f; ++fi) {
            const int64_t frame = idx[static_cast<size_t>(fi)];
            if (frame < 0 || frame >= clip->frames)
                throw std::out_of_range("gather_frames: frame index out of range");
            const float* src = clip->data.data() + frame * frame_elems;
            double* row = dst + (bi * f + fi) * frame_elems;
            for (int64_t k = 0; k < frame_elems; ++k) row[k] = static_cast<double>(src[k]);
        }
    }
    return out;
}

namespace {

// class token plus its positional slot, as a flat [width] Var
Var class_slot(const VisionEncoderParams& params) {
    const int64_t p = params.patches_per_frame();
    Var pos3 = reshape(params.pos_emb, {1, p + 1, params.width});
    Var pos0 = reshape(slice_axis1(pos3, 0, 1), {1, params.width});
    return reshape(add(params.class_token, pos0), {params.width});
}

}  // namespace

Var patchify(const Tensor& frames, const VisionEncoderParams& params) {
    if (frames.rank() != 4) throw ConfigError("patchify: frames must be [S, H, W, C]");
    const int64_t s = frames.dim(0), h = frames.dim(1), w = frames.dim(2), c = frames.dim(3);
    if (h != params.image_size || w != params.image_size || c != 3)
        throw ConfigError("patchify: frame dims do not match the encoder config");
    if (h % params.patch != 0 || w % params.patch != 0)
        throw ConfigError("patchify: frame dims not divisible by the patch size");
    const int64_t patch = params.patch;
    const int64_t side = h / patch;
    const int64_t p = side * side;
    const int64_t patch_dim = patch * patch * c;
    Tensor pm({s * p, patch_dim});
    double* dst = pm.data();
    const double* src = frames.data();
    for (int64_t si = 0; si < s; ++si) {
        const double* frame = src + si * h * w * c;
        for (int64_t py = 0; py < side; ++py) {
            for (int64_t px = 0; px < side; ++px) {
                double* row = dst + ((si * side + py) * side + px) * patch_dim;
                for (int64_t dy = 0; dy < patch; ++dy) {
                    const double* line = frame + ((py * patch + dy) * w + px * patch) * c;
                    for (int64_t k = 0; k < patch * c; ++k) row[dy * patch * c + k] = line[k];
                }
            }
        }
    }
    Var tok = matmul(leaf(std::move(pm)), params.patch_proj);
    tok = reshape(tok, {s, p, params.width});
    Var pos3 = reshape(params.pos_emb, {1, p + 1, params.width});
    Var pos_patches = reshape(slice_axis1(pos3, 1, p), {p, params.width});
    tok = add_bcast(tok, pos_patches);
    Var cls_rows = reshape(expand_rows(class_slot(params), s), {s, 1, params.width});
    return concat_axis1(cls_rows, tok);
}

Var encode_spatial(const Tensor& frames, const VisionEncoderParams& params, VisualPromptKind kind,
                   int64_t batch, int64_t num_frames) {
    if (batch < 1 || num_frames < 1)
        throw ConfigError("encode_spatial: batch and num_frames must be >= 1");
    if (frames.rank() != 4 || frames.dim(0) != batch * num_frames)
        throw ConfigError("encode_spatial: frames tensor does not hold batch * num_frames rows");
    const int64_t w = params.width;
    Var tokens = patchify(frames, params);
    Var mask;
    if (kind == VisualPromptKind::Joint) {
        if (!params.temporal_pos)
            throw ConfigError("encode_spatial: joint prompt requires a temporal positional embedding");
        if (params.temporal_pos->value.dim(0) != num_frames)
            throw ConfigError("encode_spatial: temporal positional embedding frame count mismatch");
        const int64_t p = params.patches_per_frame();
        Var patches = slice_axis1(tokens, 1, p);
        patches = add_frame_embedding(patches, params.temporal_pos, num_frames);
        patches = reshape(patches, {batch, num_frames * p, w});
        Var cls_rows = reshape(expand_rows(class_slot(params), batch), {batch, 1, w});
        Var x = concat_axis1(cls_rows, patches);
        x = transformer_stack(x, params.blocks, params.heads, mask);
        x = layer_norm(x, params.ln_f_g, params.ln_f_b);
        return matmul(select_axis1(x, 0), params.proj);
    }
    std::function<Var(Var)> pre;
    if (kind == VisualPromptKind::Shift) {
        const int64_t fold = w / 4;
        pre = [batch, num_frames, fold](Var x) {
            return temporal_shift_op(x, batch, num_frames, fold);
        };
    }
    Var x = transformer_stack(tokens, params.blocks, params.heads, mask, pre);
    x = layer_norm(x, params.ln_f_g, params.ln_f_b);
    Var u = matmul(select_axis1(x, 0), params.proj);
    return reshape(u, {batch, num_frames, params.embed_dim});
}

Var temporal_head(Var u, const TemporalHeadParams& params) {
    if (!u || u->value.rank() != 3) throw ConfigError("temporal_head: input must be [B, F, d]");
    const int64_t b = u->value.dim(0), f = u->value.dim(1), d = u->value.dim(2);
    if (f < 1) throw ConfigError("temporal_head: zero frames");
    if (d != params.dim) throw ConfigError("temporal_head: feature dim mismatch");
    switch (params.kind) {
        case VisualPromptKind::MeanP: return mean_axis1(u);
        case VisualPromptKind::Conv1D:
            return mean_axis1(conv1d_time(u, params.conv_kernel, params.conv_bias));
        case VisualPromptKind::LSTM: {
            Var h = leaf(Tensor({b, d}));
            Var c = leaf(Tensor({b, d}));
            Var sum;
            for (int64_t t = 0; t < f; ++t) {
                Var xt = select_axis1(u, t);
                Var g = add_bcast(add(matmul(xt, params.lstm_wx), matmul(h, params.lstm_wh)),
                                  params.lstm_b);
                Var gi = sigmoid_v(slice_cols(g, 0, d));
                Var gf = sigmoid_v(slice_cols(g, d, d));
                Var gg = tanh_v(slice_cols(g, 2 * d, d));
                Var go = sigmoid_v(slice_cols(g, 3 * d, d));
                c = add(mul(gf, c), mul(gi, gg));
                h = mul(go, tanh_v(c));
                sum = sum ? add(sum, h) : h;
            }
            return scale(sum, 1.0 / static_cast<double>(f));
        }
        case VisualPromptKind::Transf: {
            if (params.pos_emb->value.dim(0) != f)
                throw ConfigError("temporal_head: positional embedding frame count mismatch");
            Var x = add_bcast(u, params.pos_emb);
            x = transformer_stack(x, params.blocks, params.heads, Var{});
            return mean_axis1(x);
        }
        case VisualPromptKind::Transf_cls: {
            if (params.pos_emb->value.dim(0) != f + 1)
                throw ConfigError("temporal_head: positional embedding frame count mismatch");
            Var cls_rows = reshape(expand_rows(reshape(params.cls_token, {d}), b), {b, 1, d});
            Var x = add_bcast(concat_axis1(cls_rows, u), params.pos_emb);
            x = transformer_stack(x, params.blocks, params.heads, Var{});
            return select_axis1(x, 0);
        }
        default: throw ConfigError("temporal_head: prompt kind carries no temporal head");
    }
}

Var aggregate_clip_features(Var spatial, const TemporalHeadParams* head, VisualPromptKind kind) {
    if (kind == VisualPromptKind::Joint) return spatial;
    if (kind == VisualPromptKind::Shift) return mean_axis1(spatial);
    if (head) {
        if (head->kind != kind)
            throw ConfigError("aggregate_clip_features: temporal head kind mismatch");
        return temporal_head(spatial, *head);
    }
    if (kind == VisualPromptKind::MeanP) return mean_axis1(spatial);
    throw ConfigError("aggregate_clip_features: this prompt kind requires a temporal head");
}

Var encode_video(const std::vector<const VideoClip*>& clips, const SamplerConfig& sampler,
                 const VisionEncoderParams& params, const TemporalHeadParams* head,
                 VisualPromptKind kind, uint64_t seed) {
    if (clips.empty()) throw ConfigError("encode_video: empty batch");
    const int64_t b = static_cast<int64_t>(clips.size());
    std::vector<std::vector<int64_t>> idx(static_cast<size_t>(b));
    for (int64_t i = 0; i < b; ++i) {
        const VideoClip* clip = clips[static_cast<size_t>(i)];
        if (!clip) throw ConfigError("encode_video: null clip");
        idx[static_cast<size_t>(i)] =
            sample_segments(clip->frames, sampler, Rng::mix(seed, static_cast<uint64_t>(i)));
    }
    Tensor frames = gather_frames(clips, idx);
    Var sp = encode_spatial(frames, params, kind, b, sampler.num_frames);
    return aggregate_clip_features(sp, head, kind);
}

}  // namespace vtm
