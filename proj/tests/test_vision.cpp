#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "vtm/autodiff.hpp"
#include "vtm/errors.hpp"
#include "vtm/rng.hpp"
#include "vtm/vision_pipeline.hpp"

using namespace vtm;

namespace {

Tensor random_frames(int64_t rows, int64_t size, uint64_t seed) {
    Rng rng(seed);
    Tensor t({rows, size, size, 3});
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform();
    return t;
}

VideoClip random_clip(const std::string& id, int64_t frames, int64_t size, uint64_t seed) {
    Rng rng(seed);
    VideoClip clip;
    clip.id = id;
    clip.frames = frames;
    clip.height = size;
    clip.width = size;
    clip.data.resize(static_cast<size_t>(clip.numel()));
    for (auto& v : clip.data) v = static_cast<float>(rng.uniform());
    return clip;
}

struct Fixture {
    ParamStore store;
    VisionEncoderParams enc;

    explicit Fixture(VisualPromptKind kind, int64_t image = 16, int64_t patch = 8,
                     int64_t width = 8, int64_t layers = 1, int64_t heads = 2, int64_t d = 4,
                     int64_t frames = 2, uint64_t seed = 11) {
        Rng rng(seed);
        enc = make_vision_encoder(store, image, patch, width, layers, heads, d, frames, kind, rng);
    }
};

// fixed random projection so a tensor-valued output can be checked through a scalar
struct ScalarProbe {
    Tensor w;

    ScalarProbe(std::vector<int64_t> shape, uint64_t seed) : w(std::move(shape)) {
        Rng rng(seed);
        for (int64_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-1.0, 1.0);
    }
    Var attach(const Var& x) { return sum_all(mul(x, leaf(w))); }
    double value(const Tensor& x) const {
        double s = 0.0;
        for (int64_t i = 0; i < x.numel(); ++i) s += x[i] * w[i];
        return s;
    }
};

double max_abs_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.same_shape(b));
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST_CASE("segment sampling centers indices in eval mode") {
    SamplerConfig cfg;
    cfg.num_frames = 8;
    CHECK(sample_segments(16, cfg, 0) == std::vector<int64_t>{1, 3, 5, 7, 9, 11, 13, 15});
    CHECK(sample_segments(3, cfg, 0) == std::vector<int64_t>{0, 0, 0, 1, 1, 1, 2, 2});
    cfg.num_frames = 5;
    CHECK(sample_segments(5, cfg, 0) == std::vector<int64_t>{0, 1, 2, 3, 4});
    CHECK(sample_segments(5, cfg, 99) == sample_segments(5, cfg, 7));  // seed-independent
    CHECK_THROWS_AS(sample_segments(0, cfg, 0), ConfigError);
    cfg.num_frames = 0;
    CHECK_THROWS_AS(sample_segments(4, cfg, 0), ConfigError);
}

TEST_CASE("train-mode segment indices stay inside their segments") {
    Rng meta(404);
    for (int trial = 0; trial < 1000; ++trial) {
        const int64_t total = meta.uniform_int(1, 40);
        SamplerConfig cfg;
        cfg.num_frames = meta.uniform_int(1, 12);
        cfg.train_mode = true;
        const uint64_t seed = meta.next_u64();
        auto idx = sample_segments(total, cfg, seed);
        REQUIRE(static_cast<int64_t>(idx.size()) == cfg.num_frames);
        CHECK(idx == sample_segments(total, cfg, seed));
        for (int64_t i = 0; i < cfg.num_frames; ++i) {
            const int64_t start = (i * total) / cfg.num_frames;
            const int64_t end = ((i + 1) * total) / cfg.num_frames;
            CHECK(idx[static_cast<size_t>(i)] >= start);
            CHECK(idx[static_cast<size_t>(i)] < std::max(end, start + 1));
            if (i > 0) CHECK(idx[static_cast<size_t>(i - 1)] <= idx[static_cast<size_t>(i)]);
        }
    }
}

TEST_CASE("visual prompt names round-trip") {
    for (VisualPromptKind kind : all_visual_prompts()) {
        CHECK(visual_prompt_from_name(visual_prompt_name(kind)) == kind);
    }
    CHECK(visual_prompt_from_name("Transf_CLS") == VisualPromptKind::Transf_cls);
    CHECK_THROWS_AS(visual_prompt_from_name("pool"), ConfigError);
    CHECK(is_post_network(VisualPromptKind::MeanP));
    CHECK(!is_post_network(VisualPromptKind::Joint));
    CHECK(!is_post_network(VisualPromptKind::Shift));
}

TEST_CASE("patchify token counts and content") {
    SUBCASE("64x64 frame at patch 8 gives 64 patch tokens plus one class token") {
        Fixture f(VisualPromptKind::MeanP, 64, 8, 8, 0, 2, 4, 1);
        Var tok = patchify(random_frames(2, 64, 5), f.enc);
        REQUIRE(tok->value.rank() == 3);
        CHECK(tok->value.dim(0) == 2);
        CHECK(tok->value.dim(1) == 65);
        CHECK(tok->value.dim(2) == 8);
    }
    SUBCASE("zero frames reduce to positional content") {
        Fixture f(VisualPromptKind::MeanP);
        Tensor zeros({1, 16, 16, 3});
        Var tok = patchify(zeros, f.enc);
        const int64_t w = f.enc.width;
        const Tensor& cls = f.enc.class_token->value;
        const Tensor& pos = f.enc.pos_emb->value;
        for (int64_t j = 0; j < w; ++j) {
            CHECK(tok->value[j] == cls[j] + pos[j]);  // class slot
            for (int64_t t = 1; t < tok->value.dim(1); ++t) {
                CHECK(tok->value[t * w + j] == pos[t * w + j]);  // bias-free projection of zeros
            }
        }
    }
    SUBCASE("identical frames give identical token slices") {
        Fixture f(VisualPromptKind::MeanP);
        Tensor frames({2, 16, 16, 3});
        Rng rng(17);
        const int64_t per = 16 * 16 * 3;
        for (int64_t i = 0; i < per; ++i) {
            frames[i] = rng.uniform();
            frames[per + i] = frames[i];
        }
        Var tok = patchify(frames, f.enc);
        const int64_t slice = tok->value.dim(1) * tok->value.dim(2);
        for (int64_t i = 0; i < slice; ++i) CHECK(tok->value[i] == tok->value[slice + i]);
    }
    SUBCASE("mismatched frame dims are rejected") {
        Fixture f(VisualPromptKind::MeanP);
        CHECK_THROWS_AS(patchify(random_frames(1, 8, 3), f.enc), ConfigError);
    }
}

TEST_CASE("encode_spatial output shapes per prompt kind") {
    Tensor frames = random_frames(4, 16, 23);  // batch 2, 2 frames each
    SUBCASE("joint gives one row per clip") {
        Fixture f(VisualPromptKind::Joint);
        Var v = encode_spatial(frames, f.enc, VisualPromptKind::Joint, 2, 2);
        CHECK(v->value.rank() == 2);
        CHECK(v->value.dim(0) == 2);
        CHECK(v->value.dim(1) == 4);
    }
    SUBCASE("post-network kinds give per-frame rows") {
        Fixture f(VisualPromptKind::MeanP);
        Var v = encode_spatial(frames, f.enc, VisualPromptKind::MeanP, 2, 2);
        REQUIRE(v->value.rank() == 3);
        CHECK(v->value.dim(0) == 2);
        CHECK(v->value.dim(1) == 2);
        CHECK(v->value.dim(2) == 4);
    }
    SUBCASE("joint without a temporal embedding is rejected") {
        Fixture f(VisualPromptKind::MeanP);
        CHECK_THROWS_AS(encode_spatial(frames, f.enc, VisualPromptKind::Joint, 2, 2), ConfigError);
    }
}

TEST_CASE("shift channel plumbing matches the index oracle") {
    SUBCASE("three frames, width 4, fold 1") {
        Tensor x({3, 1, 4});
        for (int64_t f = 0; f < 3; ++f)
            for (int64_t c = 0; c < 4; ++c) x[f * 4 + c] = 10.0 * (f + 1) + c;
        Var y = temporal_shift_op(leaf(x), 1, 3, 1);
        CHECK(y->value[4 + 0] == 10.0);  // frame B channel 0 from A
        CHECK(y->value[4 + 1] == 31.0);  // frame B channel 1 from C
        CHECK(y->value[4 + 2] == 22.0);
        CHECK(y->value[4 + 3] == 23.0);
        CHECK(y->value[0] == 0.0);       // frame A channel 0: no predecessor
        CHECK(y->value[2 * 4 + 1] == 0.0);  // frame C channel 1: no successor
    }
    SUBCASE("single frame zeroes both shifted folds through the encoder") {
        Fixture f(VisualPromptKind::Shift, 16, 8, 8, 2, 2, 4, 1);
        Tensor frames = random_frames(2, 16, 31);
        Var got = encode_spatial(frames, f.enc, VisualPromptKind::Shift, 2, 1);

        // oracle: identical forward with the first 2*fold channels zeroed before each block
        const int64_t fold = f.enc.width / 4;
        Var tokens = patchify(frames, f.enc);
        Tensor mask(tokens->value.shape());
        const int64_t w = f.enc.width;
        for (int64_t i = 0; i < mask.numel(); ++i) mask[i] = (i % w < 2 * fold) ? 0.0 : 1.0;
        Var mask_leaf = leaf(mask);
        Var x = transformer_stack(tokens, f.enc.blocks, f.enc.heads, Var{},
                                  [&](Var t) { return mul(t, mask_leaf); });
        x = layer_norm(x, f.enc.ln_f_g, f.enc.ln_f_b);
        Var want = reshape(matmul(select_axis1(x, 0), f.enc.proj), {2, 1, f.enc.embed_dim});

        CHECK(max_abs_diff(got->value, want->value) == 0.0);
    }
    SUBCASE("shift changes the multi-frame forward") {
        Fixture fs(VisualPromptKind::Shift);
        Tensor frames = random_frames(4, 16, 37);
        Var with = encode_spatial(frames, fs.enc, VisualPromptKind::Shift, 2, 2);
        Var without = encode_spatial(frames, fs.enc, VisualPromptKind::MeanP, 2, 2);
        CHECK(max_abs_diff(with->value, without->value) > 1e-9);
    }
}

TEST_CASE("shift is parameter-free") {
    Fixture shift(VisualPromptKind::Shift, 16, 8, 8, 2, 2, 4, 2, 77);
    Fixture meanp(VisualPromptKind::MeanP, 16, 8, 8, 2, 2, 4, 2, 77);
    CHECK(shift.store.total_elements() == meanp.store.total_elements());
    CHECK(shift.store.count() == meanp.store.count());
    Rng rng(3);
    make_temporal_head(meanp.store, VisualPromptKind::MeanP, 2, 4, 2, 0, rng);
    CHECK(shift.store.total_elements() == meanp.store.total_elements());
}

TEST_CASE("temporal heads reduce frame features") {
    const int64_t b = 3, f = 4, d = 6;
    Rng rng(59);
    Tensor u({b, f, d});
    for (int64_t i = 0; i < u.numel(); ++i) u[i] = rng.uniform(-1.0, 1.0);
    ParamStore store;
    Rng init(4);

    SUBCASE("mean pooling of identical frames returns the frame vector") {
        Tensor same({b, f, d});
        for (int64_t bi = 0; bi < b; ++bi)
            for (int64_t fi = 0; fi < f; ++fi)
                for (int64_t di = 0; di < d; ++di) same[(bi * f + fi) * d + di] = 0.5 * bi + 0.1 * di;
        auto head = make_temporal_head(store, VisualPromptKind::MeanP, f, d, 2, 0, init);
        Var out = temporal_head(leaf(same), head);
        for (int64_t bi = 0; bi < b; ++bi)
            for (int64_t di = 0; di < d; ++di)
                CHECK(out->value.at(bi, di) == doctest::Approx(0.5 * bi + 0.1 * di).epsilon(1e-12));
    }
    SUBCASE("identity convolution equals mean pooling") {
        auto head = make_temporal_head(store, VisualPromptKind::Conv1D, f, d, 2, 0, init);
        Var got = temporal_head(leaf(u), head);
        Var want = mean_axis1(leaf(u));
        CHECK(max_abs_diff(got->value, want->value) == 0.0);
    }
    SUBCASE("zero-layer temporal transformer equals mean pooling") {
        auto head = make_temporal_head(store, VisualPromptKind::Transf, f, d, 2, 0, init);
        Var got = temporal_head(leaf(u), head);
        CHECK(max_abs_diff(got->value, mean_axis1(leaf(u))->value) == 0.0);
    }
    SUBCASE("freshly initialized temporal transformer starts as mean pooling") {
        auto head = make_temporal_head(store, VisualPromptKind::Transf, f, d, 2, 2, init);
        Var got = temporal_head(leaf(u), head);
        CHECK(max_abs_diff(got->value, mean_axis1(leaf(u))->value) == 0.0);
    }
    SUBCASE("freshly initialized class-token head returns the class token") {
        auto head = make_temporal_head(store, VisualPromptKind::Transf_cls, f, d, 2, 2, init);
        Var got = temporal_head(leaf(u), head);
        REQUIRE(got->value.dim(0) == b);
        for (int64_t bi = 0; bi < b; ++bi)
            for (int64_t di = 0; di < d; ++di)
                CHECK(got->value.at(bi, di) == head.cls_token->value[di]);
    }
    SUBCASE("recurrent head is deterministic with the right shape") {
        auto head = make_temporal_head(store, VisualPromptKind::LSTM, f, d, 2, 0, init);
        Var a = temporal_head(leaf(u), head);
        Var c = temporal_head(leaf(u), head);
        REQUIRE(a->value.rank() == 2);
        CHECK(a->value.dim(0) == b);
        CHECK(a->value.dim(1) == d);
        CHECK(max_abs_diff(a->value, c->value) == 0.0);
    }
    SUBCASE("zero frames are rejected") {
        auto head = make_temporal_head(store, VisualPromptKind::MeanP, f, d, 2, 0, init);
        CHECK_THROWS_AS(temporal_head(leaf(Tensor({2, 0, d})), head), ConfigError);
    }
    SUBCASE("feature dim mismatch is rejected") {
        auto head = make_temporal_head(store, VisualPromptKind::MeanP, f, d, 2, 0, init);
        CHECK_THROWS_AS(temporal_head(leaf(Tensor({2, f, d + 1})), head), ConfigError);
    }
    SUBCASE("head parameters for non-post-network kinds are rejected") {
        CHECK_THROWS_AS(make_temporal_head(store, VisualPromptKind::Shift, f, d, 2, 0, init),
                        ConfigError);
    }
}

TEST_CASE("encode_video end to end") {
    std::vector<VideoClip> clips;
    for (int i = 0; i < 3; ++i) clips.push_back(random_clip("c" + std::to_string(i), 8, 16, 100 + i));
    SamplerConfig sampler;
    sampler.num_frames = 2;

    SUBCASE("batch of n clips gives n rows") {
        Fixture f(VisualPromptKind::MeanP);
        std::vector<const VideoClip*> batch{&clips[0], &clips[1], &clips[2]};
        Var v = encode_video(batch, sampler, f.enc, nullptr, VisualPromptKind::MeanP, 9);
        REQUIRE(v->value.rank() == 2);
        CHECK(v->value.dim(0) == 3);
        CHECK(v->value.dim(1) == 4);
        for (int64_t i = 0; i < v->value.numel(); ++i) CHECK(std::isfinite(v->value[i]));
    }
    SUBCASE("duplicate clips give duplicate rows in eval mode") {
        Fixture f(VisualPromptKind::MeanP);
        std::vector<const VideoClip*> batch{&clips[0], &clips[1], &clips[0]};
        Var v = encode_video(batch, sampler, f.enc, nullptr, VisualPromptKind::MeanP, 9);
        for (int64_t j = 0; j < 4; ++j) CHECK(v->value.at(0, j) == v->value.at(2, j));
    }
    SUBCASE("permuting the batch permutes the rows") {
        Fixture f(VisualPromptKind::Shift);
        std::vector<const VideoClip*> fwd{&clips[0], &clips[1], &clips[2]};
        std::vector<const VideoClip*> rev{&clips[2], &clips[0], &clips[1]};
        Var a = encode_video(fwd, sampler, f.enc, nullptr, VisualPromptKind::Shift, 9);
        Var p = encode_video(rev, sampler, f.enc, nullptr, VisualPromptKind::Shift, 9);
        for (int64_t j = 0; j < 4; ++j) {
            CHECK(a->value.at(0, j) == p->value.at(1, j));
            CHECK(a->value.at(1, j) == p->value.at(2, j));
            CHECK(a->value.at(2, j) == p->value.at(0, j));
        }
    }
    SUBCASE("fresh temporal transformer matches mean pooling end to end") {
        Fixture base(VisualPromptKind::MeanP, 16, 8, 8, 1, 2, 4, 2, 11);
        Fixture tr(VisualPromptKind::Transf, 16, 8, 8, 1, 2, 4, 2, 11);
        Rng head_rng(6);
        auto head = make_temporal_head(tr.store, VisualPromptKind::Transf, 2, 4, 2, 1, head_rng);
        std::vector<const VideoClip*> batch{&clips[0], &clips[1]};
        Var a = encode_video(batch, sampler, base.enc, nullptr, VisualPromptKind::MeanP, 5);
        Var t = encode_video(batch, sampler, tr.enc, &head, VisualPromptKind::Transf, 5);
        CHECK(max_abs_diff(a->value, t->value) == 0.0);
    }
    SUBCASE("missing head parameters are rejected") {
        Fixture f(VisualPromptKind::Transf);
        std::vector<const VideoClip*> batch{&clips[0]};
        CHECK_THROWS_AS(encode_video(batch, sampler, f.enc, nullptr, VisualPromptKind::Transf, 9),
                        ConfigError);
    }
    SUBCASE("head kind mismatch is rejected") {
        Fixture f(VisualPromptKind::Transf);
        Rng head_rng(6);
        auto head = make_temporal_head(f.store, VisualPromptKind::LSTM, 2, 4, 2, 0, head_rng);
        std::vector<const VideoClip*> batch{&clips[0]};
        CHECK_THROWS_AS(encode_video(batch, sampler, f.enc, &head, VisualPromptKind::Transf, 9),
                        ConfigError);
    }
}

TEST_CASE("gradient through the video path matches finite differences") {
    Fixture f(VisualPromptKind::Transf, 16, 8, 8, 1, 2, 4, 2, 21);
    Rng head_rng(22);
    auto head = make_temporal_head(f.store, VisualPromptKind::Transf, 2, 4, 2, 1, head_rng);
    VideoClip c0 = random_clip("a", 2, 16, 301);
    VideoClip c1 = random_clip("b", 2, 16, 302);
    std::vector<const VideoClip*> batch{&c0, &c1};
    SamplerConfig sampler;
    sampler.num_frames = 2;

    auto forward = [&]() {
        return encode_video(batch, sampler, f.enc, &head, VisualPromptKind::Transf, 13);
    };
    ScalarProbe probe({2, 4}, 881);
    Var root = probe.attach(forward());
    backward(root);

    Tensor& proj = f.enc.patch_proj->value;
    const Tensor grad = f.enc.patch_proj->grad;
    REQUIRE(grad.same_shape(proj));
    Rng pick(909);
    const double eps = 1e-5;
    for (int trial = 0; trial < 8; ++trial) {
        const int64_t k = pick.uniform_int(0, proj.numel() - 1);
        const double keep = proj[k];
        proj[k] = keep + eps;
        const double up = probe.value(forward()->value);
        proj[k] = keep - eps;
        const double dn = probe.value(forward()->value);
        proj[k] = keep;
        const double fd = (up - dn) / (2.0 * eps);
        const double rel = std::abs(grad[k] - fd) / std::max({1.0, std::abs(fd), std::abs(grad[k])});
        CHECK(rel <= 1e-3);
    }
}

TEST_CASE("joint temporal embedding receives gradient") {
    Fixture f(VisualPromptKind::Joint, 16, 8, 8, 1, 2, 4, 2, 31);
    VideoClip c0 = random_clip("a", 4, 16, 303);
    std::vector<const VideoClip*> batch{&c0, &c0};
    SamplerConfig sampler;
    sampler.num_frames = 2;
    Var v = encode_video(batch, sampler, f.enc, nullptr, VisualPromptKind::Joint, 3);
    ScalarProbe probe({2, 4}, 882);
    backward(probe.attach(v));
    REQUIRE(f.enc.temporal_pos->grad.numel() > 0);
    double norm = 0.0;
    for (int64_t i = 0; i < f.enc.temporal_pos->grad.numel(); ++i)
        norm += std::abs(f.enc.temporal_pos->grad[i]);
    CHECK(norm > 0.0);
}

TEST_CASE("clip preprocessing") {
    SUBCASE("resize to the same dims is the identity") {
        VideoClip c = random_clip("x", 2, 8, 41);
        VideoClip r = resize_clip_bilinear(c, 8, 8);
        CHECK(r.data == c.data);
    }
    SUBCASE("downscale by two averages 2x2 blocks") {
        VideoClip c;
        c.frames = 1;
        c.height = 4;
        c.width = 4;
        c.data.resize(4 * 4 * 3);
        for (int64_t y = 0; y < 4; ++y)
            for (int64_t x = 0; x < 4; ++x)
                for (int64_t ch = 0; ch < 3; ++ch)
                    c.at(0, y, x, ch) = static_cast<float>((y * 4 + x) / 100.0f);
        VideoClip r = resize_clip_bilinear(c, 2, 2);
        for (int64_t y = 0; y < 2; ++y)
            for (int64_t x = 0; x < 2; ++x) {
                const double want = (c.at(0, 2 * y, 2 * x, 0) + c.at(0, 2 * y, 2 * x + 1, 0) +
                                     c.at(0, 2 * y + 1, 2 * x, 0) + c.at(0, 2 * y + 1, 2 * x + 1, 0)) /
                                    4.0;
                CHECK(r.at(0, y, x, 0) == doctest::Approx(want).epsilon(1e-6));
            }
    }
    SUBCASE("exact-size input passes through untouched") {
        VideoClip c = random_clip("x", 2, 16, 42);
        VideoClip p = preprocess_clip(c, 16, false, 0);
        CHECK(p.data == c.data);
    }
    SUBCASE("non-square input is resized on the shorter side then cropped") {
        VideoClip c;
        c.frames = 1;
        c.height = 8;
        c.width = 12;
        c.data.assign(8 * 12 * 3, 0.5f);
        VideoClip p = preprocess_clip(c, 8, false, 0);
        CHECK(p.height == 8);
        CHECK(p.width == 8);
        VideoClip q = preprocess_clip(c, 8, true, 77);
        CHECK(q.height == 8);
        CHECK(q.width == 8);
        CHECK(q.data == preprocess_clip(c, 8, true, 77).data);
    }
    SUBCASE("crop bounds are validated") {
        VideoClip c = random_clip("x", 1, 8, 43);
        CHECK_THROWS_AS(crop_clip(c, 4, 0, 8), ConfigError);
        CHECK_THROWS_AS(crop_clip(c, -1, 0, 4), ConfigError);
    }
    SUBCASE("three crops walk the longer side") {
        auto landscape = three_crop_offsets(8, 12, 8);
        REQUIRE(landscape.size() == 3);
        CHECK(landscape[0] == std::pair<int64_t, int64_t>{0, 0});
        CHECK(landscape[1] == std::pair<int64_t, int64_t>{0, 2});
        CHECK(landscape[2] == std::pair<int64_t, int64_t>{0, 4});
        auto portrait = three_crop_offsets(12, 8, 8);
        CHECK(portrait[0] == std::pair<int64_t, int64_t>{0, 0});
        CHECK(portrait[1] == std::pair<int64_t, int64_t>{2, 0});
        CHECK(portrait[2] == std::pair<int64_t, int64_t>{4, 0});
        CHECK_THROWS_AS(three_crop_offsets(6, 6, 8), ConfigError);
    }
    SUBCASE("gather rejects ragged batches") {
        VideoClip a = random_clip("a", 4, 8, 44);
        VideoClip b = random_clip("b", 4, 16, 45);
        CHECK_THROWS_AS(gather_frames({&a, &b}, {{0, 1}, {0, 1}}), ConfigError);
        CHECK_THROWS_AS(gather_frames({&a}, {{0, 9}}), std::out_of_range);
    }
}
