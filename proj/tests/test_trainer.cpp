#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "vtm/errors.hpp"
#include "vtm/model.hpp"
#include "vtm/rng.hpp"
#include "vtm/trainer.hpp"

using namespace vtm;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_cfg() {
    ModelConfig cfg;
    cfg.embed_dim = 8;
    cfg.text_width = 8;
    cfg.text_layers = 1;
    cfg.text_heads = 2;
    cfg.context_len = 8;
    cfg.image_size = 16;
    cfg.patch = 8;
    cfg.vision_width = 8;
    cfg.vision_layers = 1;
    cfg.vision_heads = 2;
    cfg.frames = 2;
    cfg.head_layers = 1;
    cfg.head_heads = 2;
    cfg.prompt = VisualPromptKind::Transf;
    return cfg;
}

LabelVocabulary tiny_vocab() { return LabelVocabulary({"lift box", "wave hand"}); }

VideoClip make_clip(const std::string& id, int64_t frames, int64_t size, uint64_t seed,
                    std::vector<int64_t> labels) {
    VideoClip c;
    c.id = id;
    c.frames = frames;
    c.height = size;
    c.width = size;
    c.data.resize(static_cast<size_t>(c.numel()));
    Rng rng(seed);
    for (float& v : c.data) v = static_cast<float>(rng.uniform());
    c.label_indices = std::move(labels);
    return c;
}

std::vector<Tensor> store_values(const ParamStore& store) {
    std::vector<Tensor> out;
    for (const Param& p : store.all()) out.push_back(p.var->value);
    return out;
}

bool values_equal(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i) {
        if (!a[i].same_shape(b[i])) return false;
        for (int64_t j = 0; j < a[i].numel(); ++j)
            if (a[i][j] != b[i][j]) return false;
    }
    return true;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

fs::path fresh_dir(const std::string& tag) {
    fs::path dir = fs::temp_directory_path() / ("vtm_trainer_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("learning rate schedule warms up then decays") {
    OptimizerConfig cfg;
    CHECK(warmup_steps(200, cfg) == 20);
    CHECK(warmup_steps(7, cfg) == 1);
    CHECK(warmup_steps(0, cfg) == 0);

    const int64_t total = 200;
    LrPair start = lr_at(0, total, cfg);
    CHECK(start.pretrained == 0.0);
    CHECK(start.fresh == 0.0);

    LrPair peak = lr_at(20, total, cfg);
    CHECK(peak.pretrained == doctest::Approx(5e-6).epsilon(1e-12));
    CHECK(peak.fresh == doctest::Approx(5e-5).epsilon(1e-12));

    LrPair end = lr_at(total, total, cfg);
    CHECK(std::abs(end.fresh) <= 1e-12 * cfg.lr_new);
    CHECK(std::abs(end.pretrained) <= 1e-12 * cfg.lr_pretrained);

    // linear ramp meets the cosine branch without a jump
    const double before = lr_at(19, total, cfg).fresh;
    const double expected_before = 19.0 / 20.0 * cfg.lr_new;
    CHECK(before == doctest::Approx(expected_before).epsilon(1e-12));
    for (int64_t s = 1; s <= 20; ++s)
        CHECK(lr_at(s, total, cfg).fresh > lr_at(s - 1, total, cfg).fresh);
    for (int64_t s = 21; s <= total; ++s)
        CHECK(lr_at(s, total, cfg).fresh < lr_at(s - 1, total, cfg).fresh);

    CHECK_THROWS_AS(lr_at(-1, total, cfg), ConfigError);
    CHECK_THROWS_AS(lr_at(total + 1, total, cfg), ConfigError);
    CHECK_THROWS_AS(lr_at(0, 0, cfg), ConfigError);
    CHECK(lr_at(1, 1, cfg).fresh <= 1e-12 * cfg.lr_new);
}

TEST_CASE("optimizer applies per-group learning rates and respects freezing") {
    OptimizerConfig cfg;
    cfg.weight_decay = 0.0;
    ParamStore store;
    store.add("a", Tensor({4}));
    store.add("b", Tensor({4}));
    store.add("c", Tensor::full({4}, 0.5));
    store.add("d", Tensor::full({4}, 0.5));
    store.at("a").tag = ParamTag::pretrained;
    store.at("c").frozen = true;
    for (const char* name : {"a", "b", "c"}) {
        Tensor& g = store.at(name).var->ensure_grad();
        for (int64_t i = 0; i < g.numel(); ++i) g[i] = 1.0;
    }

    AdamW opt(cfg);
    LrPair lr{1e-3, 1e-2};
    opt.step(store, lr);
    CHECK(opt.steps_taken() == 1);

    const double a0 = store.at("a").var->value[0];
    const double b0 = store.at("b").var->value[0];
    CHECK(a0 < 0.0);
    CHECK(b0 < 0.0);
    CHECK(b0 / a0 == doctest::Approx(10.0).epsilon(1e-6));
    // frozen and gradient-free parameters stay put
    CHECK(store.at("c").var->value[0] == 0.5);
    CHECK(store.at("d").var->value[0] == 0.5);

    // constant gradient: bias-corrected moments keep the step size constant
    for (int64_t i = 0; i < 4; ++i) store.at("b").var->grad[i] = 1.0;
    opt.step(store, lr);
    CHECK(store.at("b").var->value[0] == doctest::Approx(2.0 * b0).epsilon(1e-5));

    // decoupled decay shrinks a parameter whose gradient is zero
    OptimizerConfig decay_cfg;
    decay_cfg.weight_decay = 0.5;
    ParamStore decay_store;
    decay_store.add("e", Tensor::full({2}, 1.0));
    decay_store.at("e").var->ensure_grad();
    AdamW decay_opt(decay_cfg);
    decay_opt.step(decay_store, {1e-2, 1e-2});
    CHECK(decay_store.at("e").var->value[0] == doctest::Approx(1.0 - 1e-2 * 0.5).epsilon(1e-6));
}

TEST_CASE("gradient clipping rescales to the norm cap") {
    ParamStore store;
    store.add("p", Tensor({4}));
    store.add("q", Tensor({2}));
    store.add("r", Tensor({2}));
    store.at("q").frozen = true;
    Tensor& gp = store.at("p").var->ensure_grad();
    for (int64_t i = 0; i < 4; ++i) gp[i] = 3.0;
    Tensor& gq = store.at("q").var->ensure_grad();
    gq[0] = gq[1] = 100.0;

    // global norm sqrt(4 * 9) = 6 counts only update-eligible parameters
    CHECK(clip_gradients(store, 10.0) == doctest::Approx(6.0).epsilon(1e-12));
    CHECK(store.at("p").var->grad[0] == 3.0);  // under the cap: untouched

    CHECK(clip_gradients(store, 3.0) == doctest::Approx(6.0).epsilon(1e-12));
    for (int64_t i = 0; i < 4; ++i) CHECK(store.at("p").var->grad[i] == 1.5);
    CHECK(store.at("q").var->grad[0] == 100.0);  // frozen: never rescaled

    // zero cap disables clipping
    CHECK(clip_gradients(store, 0.0) == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(store.at("p").var->grad[0] == 1.5);
}

TEST_CASE("model assembly fixes the parameter layout") {
    Model model = build_model(tiny_cfg(), tiny_vocab());
    const auto& params = model.store.all();
    REQUIRE(params.size() > 4);
    CHECK(params.front().name.rfind("text.", 0) == 0);
    CHECK(params.back().name == "temp.log_scale");
    int phase = 0;  // text -> vision -> head -> temp
    for (const Param& p : params) {
        int want = 3;
        if (p.name.rfind("text.", 0) == 0) want = 0;
        else if (p.name.rfind("vision.", 0) == 0) want = 1;
        else if (p.name.rfind("head.", 0) == 0) want = 2;
        CHECK(want >= phase);
        phase = want;
    }
    CHECK(model.has_head);
    for (const Param& p : params) CHECK(p.tag == ParamTag::fresh);

    ModelConfig other = tiny_cfg();
    other.prompt = VisualPromptKind::MeanP;
    CHECK(config_hash(tiny_cfg()) == config_hash(tiny_cfg()));
    CHECK(config_hash(tiny_cfg()) != config_hash(other));

    ModelConfig uni = tiny_cfg();
    uni.unimodal = true;
    Model linear = build_model(uni, tiny_vocab());
    CHECK_FALSE(linear.store.has("text.proj"));
    CHECK_FALSE(linear.store.has("temp.log_scale"));
    CHECK(linear.store.has("unimodal.w"));
    CHECK(linear.store.has("unimodal.b"));
    CHECK_THROWS_AS(model_label_embeddings(linear, LabelEmbedMode::ensemble, 0), ConfigError);
}

TEST_CASE("training steps are deterministic and honor freezing") {
    std::vector<VideoClip> clips;
    for (int i = 0; i < 4; ++i)
        clips.push_back(make_clip("c" + std::to_string(i), 4, 16, 100 + i, {i % 2}));
    std::vector<const VideoClip*> ptrs;
    for (const VideoClip& c : clips) ptrs.push_back(&c);
    std::vector<int64_t> labels = {0, 1, 0, 1};

    OptimizerConfig cfg;
    LrPair lr{1e-3, 1e-3};

    Model a = build_model(tiny_cfg(), tiny_vocab());
    Model b = build_model(tiny_cfg(), tiny_vocab());
    AdamW opt_a(cfg), opt_b(cfg);
    const double loss_a = train_step(a, ptrs, labels, opt_a, lr, 9);
    const double loss_b = train_step(b, ptrs, labels, opt_b, lr, 9);
    CHECK(loss_a == loss_b);
    CHECK(std::isfinite(loss_a));
    CHECK(values_equal(store_values(a.store), store_values(b.store)));

    Model frozen = build_model(tiny_cfg(), tiny_vocab());
    frozen.store.set_frozen("", true);
    auto before = store_values(frozen.store);
    AdamW opt_f(cfg);
    const double loss_f = train_step(frozen, ptrs, labels, opt_f, lr, 9);
    CHECK(std::isfinite(loss_f));
    CHECK(values_equal(before, store_values(frozen.store)));

    Model part = build_model(tiny_cfg(), tiny_vocab());
    freeze(part, false, true);
    std::vector<Tensor> part_before = store_values(part.store);
    AdamW opt_p(cfg);
    train_step(part, ptrs, labels, opt_p, lr, 9);
    bool head_moved = false, temp_moved = false;
    for (size_t i = 0; i < part.store.all().size(); ++i) {
        const Param& p = part.store.all()[i];
        const Tensor& now = p.var->value;
        bool same = true;
        for (int64_t j = 0; j < now.numel() && same; ++j) same = now[j] == part_before[i][j];
        if (p.name.rfind("vision.", 0) == 0) {
            // the frozen tower must come through the step bit-identical
            CHECK(same);
        } else if (p.name.rfind("head.", 0) == 0) {
            head_moved = head_moved || !same;
        } else if (p.name == "temp.log_scale") {
            temp_moved = !same;
        }
    }
    // gradients still flow through the frozen tower into trainable slots
    CHECK(head_moved);
    CHECK(temp_moved);

    ModelConfig uni = tiny_cfg();
    uni.unimodal = true;
    Model linear = build_model(uni, tiny_vocab());
    CHECK_THROWS_AS(freeze(linear, true, false), ConfigError);
}

TEST_CASE("loss decreases on a small separable batch") {
    std::vector<VideoClip> clips;
    for (int i = 0; i < 4; ++i)
        clips.push_back(make_clip("c" + std::to_string(i), 4, 16, 200 + i, {i % 2}));
    std::vector<const VideoClip*> ptrs;
    for (const VideoClip& c : clips) ptrs.push_back(&c);
    std::vector<int64_t> labels = {0, 1, 0, 1};

    Model model = build_model(tiny_cfg(), tiny_vocab());
    OptimizerConfig cfg;
    cfg.weight_decay = 0.01;
    AdamW opt(cfg);
    LrPair lr{2e-3, 2e-3};
    std::vector<double> losses;
    for (int step = 0; step < 120; ++step)
        losses.push_back(train_step(model, ptrs, labels, opt, lr, static_cast<uint64_t>(step)));
    CHECK(losses.back() < losses.front());
    double tail = 0.0;
    for (size_t i = losses.size() - 5; i < losses.size(); ++i) tail += losses[i];
    CHECK(tail / 5.0 < losses.front());
}

TEST_CASE("checkpoints round-trip bit-exactly") {
    Model model = build_model(tiny_cfg(), tiny_vocab());
    const uint64_t hash = config_hash(model.cfg);
    Checkpoint ckpt = snapshot(model.store, 7, hash);
    CHECK(static_cast<int64_t>(ckpt.entries.size()) == model.store.count());
    CHECK(static_cast<int64_t>(ckpt.payload.size()) == model.store.total_elements());

    fs::path dir = fresh_dir("ckpt");
    fs::path first = dir / "a.ckpt";
    fs::path second = dir / "b.ckpt";
    save_checkpoint(ckpt, first);
    Checkpoint loaded = load_checkpoint(first);
    CHECK(loaded.step == 7);
    CHECK(loaded.config_hash == hash);
    REQUIRE(loaded.entries.size() == ckpt.entries.size());
    for (size_t i = 0; i < ckpt.entries.size(); ++i) {
        CHECK(loaded.entries[i].name == ckpt.entries[i].name);
        CHECK(loaded.entries[i].tag == ckpt.entries[i].tag);
        CHECK(loaded.entries[i].shape == ckpt.entries[i].shape);
    }
    REQUIRE(loaded.payload.size() == ckpt.payload.size());
    for (size_t i = 0; i < ckpt.payload.size(); ++i) CHECK(loaded.payload[i] == ckpt.payload[i]);
    save_checkpoint(loaded, second);
    CHECK(read_file(first) == read_file(second));

    // corruption surfaces as typed errors
    std::string bytes = read_file(first);
    fs::path cut = dir / "cut.ckpt";
    std::ofstream(cut, std::ios::binary) << bytes.substr(0, bytes.size() - 10);
    CHECK_THROWS_AS(load_checkpoint(cut), TruncatedPayloadError);
    fs::path stub = dir / "stub.ckpt";
    std::ofstream(stub, std::ios::binary) << "xy";
    CHECK_THROWS_AS(load_checkpoint(stub), BadMagicError);
    fs::path wrong = dir / "wrong.ckpt";
    {
        std::ofstream out(wrong, std::ios::binary);
        const char prefix[8] = {9, 0, 0, 0, 0, 0, 0, 0};
        out.write(prefix, 8);
        out << "redacted\n";
    }
    CHECK_THROWS_AS(load_checkpoint(wrong), BadMagicError);

    // strict restore puts back the exact values and tags
    Param& probe = model.store.at("vision.patch_proj");
    probe.var->value[0] += 1.0;
    probe.tag = ParamTag::pretrained;
    restore_into(model.store, ckpt);
    Checkpoint again = snapshot(model.store, 7, hash);
    CHECK(again.payload == ckpt.payload);
    CHECK(model.store.at("vision.patch_proj").tag == ParamTag::fresh);

    ModelConfig deeper = tiny_cfg();
    deeper.vision_layers = 2;
    Model other = build_model(deeper, tiny_vocab());
    CHECK_THROWS_AS(restore_into(other.store, ckpt), DataError);
    ModelConfig coarse = tiny_cfg();
    coarse.patch = 4;
    Model shapes = build_model(coarse, tiny_vocab());
    CHECK_THROWS_AS(restore_into(shapes.store, ckpt), DataError);
}

TEST_CASE("initialization from a checkpoint tags loaded parameters") {
    ModelConfig pool_cfg = tiny_cfg();
    pool_cfg.prompt = VisualPromptKind::MeanP;
    Model pool = build_model(pool_cfg, tiny_vocab());
    Model headful = build_model(tiny_cfg(), tiny_vocab());

    Checkpoint pool_ckpt = snapshot(pool.store, 3, config_hash(pool.cfg));
    std::ostringstream warn;
    initialize_from(headful.store, pool_ckpt, &warn);
    CHECK(warn.str().empty());
    for (const Param& p : headful.store.all()) {
        const bool loaded = pool.store.has(p.name);
        CHECK(p.tag == (loaded ? ParamTag::pretrained : ParamTag::fresh));
    }
    const Tensor& src = pool.store.at("text.proj").var->value;
    const Tensor& dst = headful.store.at("text.proj").var->value;
    for (int64_t i = 0; i < src.numel(); ++i) CHECK(src[i] == dst[i]);

    // entries the target never registered are skipped with a note
    Model pool2 = build_model(pool_cfg, tiny_vocab());
    Checkpoint head_ckpt = snapshot(headful.store, 4, config_hash(headful.cfg));
    std::ostringstream warn2;
    initialize_from(pool2.store, head_ckpt, &warn2);
    CHECK(warn2.str().find("head.") != std::string::npos);
    const Tensor& back = pool2.store.at("text.proj").var->value;
    for (int64_t i = 0; i < back.numel(); ++i) CHECK(back[i] == src[i]);

    ModelConfig wide = tiny_cfg();
    wide.embed_dim = 16;
    Model mism = build_model(wide, tiny_vocab());
    CHECK_THROWS_AS(initialize_from(mism.store, pool_ckpt, nullptr), DataError);
}

TEST_CASE("fit is reproducible and writes checkpoints") {
    fs::path data_dir = fresh_dir("fit_data");
    SyntheticSpec spec;
    spec.num_classes = 2;
    spec.frames = 4;
    spec.size = 16;
    spec.train_per_class = 2;
    spec.val_per_class = 1;
    spec.seed = 5;
    DatasetManifest manifest = generate_synthetic(spec, data_dir);

    FitOptions options;
    options.opt.epochs = 2;
    options.opt.batch_size = 4;
    options.opt.lr_new = 1e-3;
    options.opt.lr_pretrained = 1e-3;
    options.opt.seed = 3;
    options.out_dir = fresh_dir("fit_out");

    Model one = build_model(tiny_cfg(), manifest.vocab);
    FitResult first = fit(one, manifest, options);
    CHECK(first.total_steps == 2);
    CHECK(fs::exists(options.out_dir / "best.ckpt"));
    CHECK(fs::exists(options.out_dir / "last.ckpt"));
    size_t train_lines = 0, val_lines = 0;
    for (const std::string& line : first.metric_lines) {
        if (line.find("\ttrain\tloss\t") != std::string::npos) ++train_lines;
        if (line.find("\tval\t") != std::string::npos) ++val_lines;
    }
    CHECK(train_lines == 2);
    CHECK(val_lines == 4);  // top1 and top5 per epoch
    CHECK(first.best_top1 >= 0.0);
    CHECK(first.best_step >= 1);

    Model two = build_model(tiny_cfg(), manifest.vocab);
    FitOptions repeat = options;
    repeat.out_dir.clear();
    FitResult second = fit(two, manifest, repeat);
    CHECK(first.metric_lines == second.metric_lines);
    CHECK(first.last.payload == second.last.payload);

    Model zero = build_model(tiny_cfg(), manifest.vocab);
    FitOptions none = options;
    none.opt.epochs = 0;
    none.out_dir = fresh_dir("fit_zero");
    FitResult empty = fit(zero, manifest, none);
    CHECK(empty.total_steps == 0);
    CHECK(empty.metric_lines.empty());
    CHECK(empty.best.payload == empty.last.payload);
    CHECK(fs::exists(none.out_dir / "last.ckpt"));
}
