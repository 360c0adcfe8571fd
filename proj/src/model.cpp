#include "vtm/model.hpp"

#include <cmath>
#include <sstream>

#include "vtm/errors.hpp"
#include "vtm/rng.hpp"

namespace vtm {

namespace {
constexpr uint64_t kCropSalt = 0x63726f70;
constexpr uint64_t kTemplateSalt = 0x746d706c;
}  // namespace

Model build_model(const ModelConfig& cfg, const LabelVocabulary& vocab,
                  std::vector<PromptTemplate> templates) {
    if (vocab.size() < 1) throw ConfigError("build_model: empty label vocabulary");
    if (cfg.embed_dim < 1) throw ConfigError("build_model: embed_dim must be >= 1");
    Model m;
    m.cfg = cfg;
    m.vocab = vocab;
    m.templates = cfg.text_prompt
                      ? (templates.empty() ? default_templates() : std::move(templates))
                      : label_only_templates();
    m.tokenizer = Tokenizer::build_for(vocab, m.templates);
    Rng rng(cfg.init_seed);
    if (!cfg.unimodal) {
        m.text = make_text_encoder(m.store, m.tokenizer.size(), cfg.text_width, cfg.text_layers,
                                   cfg.text_heads, cfg.context_len, cfg.embed_dim, rng);
    }
    m.vision = make_vision_encoder(m.store, cfg.image_size, cfg.patch, cfg.vision_width,
                                   cfg.vision_layers, cfg.vision_heads, cfg.embed_dim, cfg.frames,
                                   cfg.prompt, rng);
    if (is_post_network(cfg.prompt)) {
        m.head = make_temporal_head(m.store, cfg.prompt, cfg.frames, cfg.embed_dim, cfg.head_heads,
                                    cfg.head_layers, rng);
        m.has_head = true;
    }
    if (!cfg.unimodal) {
        m.temp = make_temperature(m.store);
    } else {
        m.unimodal_w = m.store.add(
            "unimodal.w",
            normal_init({cfg.embed_dim, vocab.size()},
                        1.0 / std::sqrt(static_cast<double>(cfg.embed_dim)), rng));
        m.unimodal_b = m.store.add("unimodal.b", Tensor({vocab.size()}));
    }
    return m;
}

uint64_t fnv1a64(const std::string& text) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

uint64_t config_hash(const ModelConfig& cfg) {
    std::ostringstream os;
    os << cfg.embed_dim << '|' << cfg.text_width << '|' << cfg.text_layers << '|' << cfg.text_heads
       << '|' << cfg.context_len << '|' << cfg.image_size << '|' << cfg.patch << '|'
       << cfg.vision_width << '|' << cfg.vision_layers << '|' << cfg.vision_heads << '|'
       << cfg.frames << '|' << cfg.head_layers << '|' << cfg.head_heads << '|'
       << visual_prompt_name(cfg.prompt) << '|' << cfg.text_prompt << '|' << cfg.unimodal;
    return fnv1a64(os.str());
}

Var model_video_batch(Model& model, const std::vector<const VideoClip*>& clips, bool train_mode,
                      uint64_t seed) {
    if (clips.empty()) throw ConfigError("model_video_batch: empty batch");
    std::vector<VideoClip> prepped;
    std::vector<const VideoClip*> batch;
    prepped.reserve(clips.size());
    batch.reserve(clips.size());
    for (size_t i = 0; i < clips.size(); ++i) {
        if (!clips[i]) throw ConfigError("model_video_batch: null clip");
        if (clips[i]->height == model.cfg.image_size && clips[i]->width == model.cfg.image_size) {
            batch.push_back(clips[i]);
        } else {
            prepped.push_back(preprocess_clip(*clips[i], model.cfg.image_size, train_mode,
                                              Rng::mix(Rng::mix(seed, kCropSalt), i)));
            batch.push_back(&prepped.back());
        }
    }
    SamplerConfig sampler;
    sampler.num_frames = model.cfg.frames;
    sampler.train_mode = train_mode;
    return encode_video(batch, sampler, model.vision, model.has_head ? &model.head : nullptr,
                        model.cfg.prompt, seed);
}

Var model_label_embeddings(Model& model, LabelEmbedMode mode, uint64_t seed) {
    if (model.cfg.unimodal)
        throw ConfigError("model_label_embeddings: unimodal model has no text tower");
    return embed_label_set(model.vocab, model.templates, model.tokenizer, model.text, mode, seed);
}

Var model_loss(Model& model, const std::vector<const VideoClip*>& clips,
               const std::vector<int64_t>& labels, uint64_t step_seed) {
    if (clips.size() != labels.size()) throw ConfigError("model_loss: clip/label count mismatch");
    if (clips.empty()) throw ConfigError("model_loss: empty batch");
    const int64_t v = model.vocab.size();
    for (int64_t l : labels)
        if (l < 0 || l >= v) throw std::out_of_range("model_loss: label index out of range");
    Var video = model_video_batch(model, clips, true, step_seed);
    if (model.cfg.unimodal) {
        Var logits = add_bcast(matmul(video, model.unimodal_w), model.unimodal_b);
        Tensor onehot({static_cast<int64_t>(labels.size()), v});
        for (size_t i = 0; i < labels.size(); ++i)
            onehot[static_cast<int64_t>(i) * v + labels[i]] = 1.0;
        return kl_loss_from_logits(logits, onehot);
    }
    Var label_emb =
        model_label_embeddings(model, LabelEmbedMode::sample, Rng::mix(step_seed, kTemplateSalt));
    Var text_rows = gather_rows(label_emb, labels);
    return contrastive_loss_graph(video, text_rows, labels, model.temp);
}

}  // namespace vtm
